//! Confusion matrices, class-balanced one-vs-all metrics, bootstrap intervals,
//! sleep statistics and regressions.
//!
//! Metrics are computed on the row-normalized ("class-balanced") confusion
//! matrix `R`. For stage `c` the positive class is row `c`; the negative class
//! is the average of the other four rows, so
//!
//! ```text
//! sens_c = R[c][c]
//! fpr_c  = Σ_{r≠c} R[r][c] / 4
//! prec_c = sens_c / (sens_c + fpr_c)
//! acc_c  = (sens_c + 1 − fpr_c) / 2
//! ```

mod bootstrap;
mod hypnogram;
mod regression;
pub mod report;
mod sleep;

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SleepStage;

pub use bootstrap::{bootstrap_ci, BootstrapResult, Interval};
pub use hypnogram::{export_hypnogram, parse_hypnogram, render_hypnogram_svg};
pub use regression::{linreg_r2, ln_gamma, regularized_incomplete_beta, RegressionResult};
pub use sleep::{sleep_efficiency, time_in_bed, transitional_fraction};

const N: usize = SleepStage::COUNT;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predicted} predictions for {expert} expert labels")]
    LengthMismatch { predicted: usize, expert: usize },
    #[error("no epochs of stage {0}; class-balanced metrics are undefined")]
    EmptyClass(SleepStage),
    #[error("bootstrap needs at least 2 recordings, got {0}")]
    TooFewRecordings(usize),
    #[error("no sleep onset: no non-W epoch at or after lights-out")]
    NoSleepOnset,
    #[error("lights-out epoch {epoch} outside a {len}-epoch sequence")]
    LightsOut { epoch: usize, len: usize },
    #[error("regression needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate predictor: x is constant")]
    DegeneratePredictor,
    #[error("x and y lengths differ ({0} vs {1})")]
    Unpaired(usize, usize),
    #[error("hypnogram line {line}: {message}")]
    Hypnogram { line: usize, message: String },
}

/// Counts indexed `[expert][predicted]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N]; N],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; N]; N]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn record(&mut self, expert: SleepStage, predicted: SleepStage) {
        self.counts[expert.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> [u64; N] {
        self.counts.map(|r| r.iter().sum())
    }

    pub fn get(&self, expert: SleepStage, predicted: SleepStage) -> u64 {
        self.counts[expert.index()][predicted.index()]
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.counts.iter_mut().flatten().zip(rhs.counts.iter().flatten()) {
            *a += b;
        }
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionMatrix::default(), |a, b| a + b)
    }
}

impl<'a> std::iter::Sum<&'a ConfusionMatrix> for ConfusionMatrix {
    fn sum<I: Iterator<Item = &'a Self>>(iter: I) -> Self {
        iter.fold(ConfusionMatrix::default(), |a, b| a + *b)
    }
}

pub fn confusion(predicted: &[SleepStage], expert: &[SleepStage]) -> Result<ConfusionMatrix, EvalError> {
    if predicted.len() != expert.len() {
        return Err(EvalError::LengthMismatch { predicted: predicted.len(), expert: expert.len() });
    }
    let mut c = ConfusionMatrix::default();
    for (&p, &e) in predicted.iter().zip(expert) {
        c.record(e, p);
    }
    Ok(c)
}

/// Row-normalized matrix. All-zero rows stay zero and are listed in `empty`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub rows: [[f64; N]; N],
    pub empty: Vec<SleepStage>,
}

pub fn row_normalize(c: &ConfusionMatrix) -> Normalized {
    let mut rows = [[0.0; N]; N];
    let mut empty = Vec::new();
    for (i, (out, counts)) in rows.iter_mut().zip(&c.counts).enumerate() {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            empty.push(SleepStage::ALL[i]);
            continue;
        }
        for (o, &v) in out.iter_mut().zip(counts) {
            *o = v as f64 / total as f64;
        }
    }
    Normalized { rows, empty }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub sensitivity: f64,
    pub precision: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl StageMetrics {
    fn zip(items: &[StageMetrics], f: impl Fn(&[f64]) -> f64) -> StageMetrics {
        let col = |g: fn(&StageMetrics) -> f64| f(&items.iter().map(g).collect::<Vec<_>>());
        StageMetrics {
            sensitivity: col(|m| m.sensitivity),
            precision: col(|m| m.precision),
            f1: col(|m| m.f1),
            accuracy: col(|m| m.accuracy),
        }
    }
}

/// How overall accuracy is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverallAccuracy {
    /// trace / total of the raw counts.
    #[default]
    Raw,
    /// Mean of the per-stage sensitivities.
    Balanced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// Indexed by [`SleepStage::index`].
    pub per_stage: [StageMetrics; N],
    pub mean: StageMetrics,
    pub worst: StageMetrics,
    pub overall_accuracy: f64,
}

pub const METRIC_NAMES: [&str; 4] = ["precision", "sensitivity", "f1", "accuracy"];

fn metric_value(m: &StageMetrics, name: &str) -> f64 {
    match name {
        "precision" => m.precision,
        "sensitivity" => m.sensitivity,
        "f1" => m.f1,
        "accuracy" => m.accuracy,
        _ => unreachable!("unknown metric {name}"),
    }
}

impl ClassMetrics {
    pub fn stage(&self, s: SleepStage) -> &StageMetrics {
        &self.per_stage[s.index()]
    }

    /// Flat `(name, value)` list: `precision.N1`, …, `precision.mean`,
    /// `precision.worst`, …, `overall_accuracy`.
    pub fn named_values(&self) -> Vec<(String, f64)> {
        let mut out = Vec::with_capacity(4 * (N + 2) + 1);
        for name in METRIC_NAMES {
            for s in SleepStage::ALL {
                out.push((format!("{name}.{s}"), metric_value(self.stage(s), name)));
            }
            out.push((format!("{name}.mean"), metric_value(&self.mean, name)));
            out.push((format!("{name}.worst"), metric_value(&self.worst, name)));
        }
        out.push(("overall_accuracy".into(), self.overall_accuracy));
        out
    }
}

pub fn class_metrics(c: &ConfusionMatrix) -> Result<ClassMetrics, EvalError> {
    class_metrics_with(c, OverallAccuracy::Raw)
}

pub fn class_metrics_with(c: &ConfusionMatrix, overall: OverallAccuracy) -> Result<ClassMetrics, EvalError> {
    let r = row_normalize(c);
    if let Some(&s) = r.empty.first() {
        return Err(EvalError::EmptyClass(s));
    }
    let mut per_stage = [StageMetrics::default(); N];
    for (ci, m) in per_stage.iter_mut().enumerate() {
        let sens = r.rows[ci][ci];
        let fpr = (0..N).filter(|&ri| ri != ci).map(|ri| r.rows[ri][ci]).sum::<f64>() / (N - 1) as f64;
        let prec = if sens + fpr > 0.0 { sens / (sens + fpr) } else { 0.0 };
        let f1 = if prec + sens > 0.0 { 2.0 * prec * sens / (prec + sens) } else { 0.0 };
        *m = StageMetrics { sensitivity: sens, precision: prec, f1, accuracy: (sens + 1.0 - fpr) / 2.0 };
    }
    let mean = StageMetrics::zip(&per_stage, |v| v.iter().sum::<f64>() / v.len() as f64);
    let worst = StageMetrics::zip(&per_stage, |v| v.iter().copied().fold(f64::INFINITY, f64::min));
    let overall_accuracy = match overall {
        OverallAccuracy::Raw => c.trace() as f64 / c.total() as f64,
        OverallAccuracy::Balanced => mean.sensitivity,
    };
    Ok(ClassMetrics { per_stage, mean, worst, overall_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::REFERENCE_CONFUSION;
    use proptest::prelude::*;
    use SleepStage::*;

    fn table_iv() -> ConfusionMatrix {
        ConfusionMatrix::new(REFERENCE_CONFUSION)
    }

    #[test]
    fn perfect_prediction_is_diagonal() {
        let s = [N1, N2, N2, W, R, N3];
        let c = confusion(&s, &s).unwrap();
        assert_eq!(c.trace(), 6);
        assert_eq!(c.get(N2, N2), 2);
        let c = confusion(&[W], &[N1]).unwrap();
        assert_eq!(c.get(N1, W), 1);
        assert!(confusion(&[W], &[]).is_err());
    }

    #[test]
    fn table_iv_first_row() {
        let r = row_normalize(&table_iv());
        let expect = [0.59993, 0.09377, 0.00326, 0.15460, 0.14844];
        for (a, b) in r.rows[0].iter().zip(expect) {
            assert!((a - b).abs() < 5e-5, "{a} {b}");
        }
        for row in r.rows {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_row_flagged() {
        let mut c = ConfusionMatrix::default();
        c.record(N2, N2);
        let r = row_normalize(&c);
        assert_eq!(r.empty, vec![N1, N3, R, W]);
        assert!(matches!(class_metrics(&c), Err(EvalError::EmptyClass(N1))));
    }

    #[test]
    fn identity_metrics_are_one() {
        let mut counts = [[0; 5]; 5];
        (0..5).for_each(|i| counts[i][i] = 7);
        let m = class_metrics(&ConfusionMatrix::new(counts)).unwrap();
        for (_, v) in m.named_values() {
            assert_eq!(v, 1.0);
        }
    }

    /// Independent recomputation from the printed counts.
    #[test]
    fn table_iv_metrics() {
        let m = class_metrics(&table_iv()).unwrap();
        let sens = [0.5999, 0.7315, 0.9116, 0.7374, 0.7047];
        let prec = [0.8571, 0.9073, 0.9761, 0.9138, 0.9191];
        let f1 = [0.7058, 0.8099, 0.9428, 0.8162, 0.7978];
        let acc = [0.75, 0.8284, 0.9446, 0.8339, 0.8213];
        for i in 0..5 {
            let s = &m.per_stage[i];
            assert!((s.sensitivity - sens[i]).abs() < 1e-4);
            assert!((s.precision - prec[i]).abs() < 1e-4);
            assert!((s.f1 - f1[i]).abs() < 1e-4);
            assert!((s.accuracy - acc[i]).abs() < 1e-4);
        }
        assert!((m.overall_accuracy - 0.74766).abs() < 1e-5);
        assert!((m.mean.f1 - 0.8145).abs() < 1e-4);
        assert!((m.worst.precision - 0.8571).abs() < 1e-4);
        let balanced = class_metrics_with(&table_iv(), OverallAccuracy::Balanced).unwrap();
        assert!((balanced.overall_accuracy - 0.737).abs() < 1e-3);
    }

    fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
        prop::array::uniform5(prop::array::uniform5(0u64..500)).prop_filter_map("nonzero rows", |mut c| {
            for (i, row) in c.iter_mut().enumerate() {
                row[i] += 1;
            }
            Some(ConfusionMatrix::new(c))
        })
    }

    proptest! {
        #[test]
        fn counts_total_sequence_length(pairs in prop::collection::vec((0usize..5, 0usize..5), 0..200)) {
            let p: Vec<_> = pairs.iter().map(|x| SleepStage::ALL[x.0]).collect();
            let e: Vec<_> = pairs.iter().map(|x| SleepStage::ALL[x.1]).collect();
            prop_assert_eq!(confusion(&p, &e).unwrap().total(), pairs.len() as u64);
        }

        #[test]
        fn row_scaling_invariance(c in matrix(), row in 0usize..5, k in 2u64..7) {
            let mut scaled = c;
            scaled.counts[row].iter_mut().for_each(|v| *v *= k);
            let a = class_metrics(&c).unwrap();
            let b = class_metrics(&scaled).unwrap();
            for (x, y) in a.per_stage.iter().zip(&b.per_stage) {
                prop_assert!((x.f1 - y.f1).abs() < 1e-12);
                prop_assert!((x.precision - y.precision).abs() < 1e-12);
                prop_assert!((x.accuracy - y.accuracy).abs() < 1e-12);
            }
        }

        #[test]
        fn f1_is_harmonic_mean_and_worst_below_mean(c in matrix()) {
            let m = class_metrics(&c).unwrap();
            for s in &m.per_stage {
                if s.precision + s.sensitivity > 0.0 {
                    let h = 2.0 * s.precision * s.sensitivity / (s.precision + s.sensitivity);
                    prop_assert!((s.f1 - h).abs() < 1e-12);
                }
                for v in [s.precision, s.sensitivity, s.f1, s.accuracy] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            prop_assert!(m.worst.f1 <= m.mean.f1 + 1e-15);
            prop_assert!(m.worst.precision <= m.mean.precision + 1e-15);
        }
    }
}
