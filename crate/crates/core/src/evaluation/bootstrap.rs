use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{class_metrics_with, ConfusionMatrix, EvalError, OverallAccuracy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub samples: usize,
    pub seed: u64,
    /// Samples whose summed matrix had an empty stage row; their class-wise
    /// metrics are left out of the order statistics.
    pub excluded: usize,
    /// Keyed by [`super::ClassMetrics::named_values`] names.
    pub intervals: BTreeMap<String, Interval>,
}

impl BootstrapResult {
    pub fn get(&self, name: &str) -> Option<&Interval> {
        self.intervals.get(name)
    }
}

/// 1-based order-statistic ranks used for `m` values: 26 and 975 when
/// `m = 1000`, scaled proportionally (rounded up) otherwise.
pub(crate) fn bound_ranks(m: usize) -> (usize, usize) {
    let lo = (26 * m).div_ceil(1000).max(1);
    let hi = (975 * m).div_ceil(1000).max(1);
    (lo, hi)
}

/// Generator for bootstrap sample `index`: its own ChaCha stream under `seed`.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Resamples whole recordings with replacement, sums their matrices and
/// recomputes every metric, `n_samples` times.
pub fn bootstrap_ci(
    per_recording: &[ConfusionMatrix],
    n_samples: usize,
    seed: u64,
    overall: OverallAccuracy,
) -> Result<BootstrapResult, EvalError> {
    let n = per_recording.len();
    if n < 2 {
        return Err(EvalError::TooFewRecordings(n));
    }
    let draws: Vec<Result<Vec<(String, f64)>, f64>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let sum: ConfusionMatrix = (0..n).map(|_| per_recording[rng.random_range(0..n)]).sum();
            match class_metrics_with(&sum, overall) {
                Ok(m) => Ok(m.named_values()),
                // Raw overall accuracy is still defined with a missing stage.
                Err(_) => Err(sum.trace() as f64 / sum.total().max(1) as f64),
            }
        })
        .collect();

    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut excluded = 0;
    for d in draws {
        match d {
            Ok(values) => values.into_iter().for_each(|(k, v)| columns.entry(k).or_default().push(v)),
            Err(overall_acc) => {
                excluded += 1;
                if overall == OverallAccuracy::Raw {
                    columns.entry("overall_accuracy".into()).or_default().push(overall_acc);
                }
            }
        }
    }
    let intervals = columns
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            let (lo, hi) = bound_ranks(v.len());
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            (k, Interval { mean, lower: v[lo - 1], upper: v[hi - 1] })
        })
        .collect();
    Ok(BootstrapResult { samples: n_samples, seed, excluded, intervals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::class_metrics;
    use crate::synthetic::REFERENCE_CONFUSION;

    #[test]
    fn ranks_for_a_thousand() {
        assert_eq!(bound_ranks(1000), (26, 975));
        assert_eq!(bound_ranks(1), (1, 1));
    }

    #[test]
    fn identical_matrices_give_zero_width() {
        let c = ConfusionMatrix::new(REFERENCE_CONFUSION);
        let r = bootstrap_ci(&vec![c; 39], 200, 7, OverallAccuracy::Raw).unwrap();
        let point = class_metrics(&c).unwrap();
        for (name, v) in point.named_values() {
            let i = r.get(&name).unwrap();
            assert!((i.lower - i.upper).abs() < 1e-12, "{name}");
            assert!((i.mean - v).abs() < 1e-12, "{name}");
        }
        assert_eq!(r.excluded, 0);
    }

    #[test]
    fn reproducible_and_ordered() {
        let mut mats = Vec::new();
        for k in 0..10u64 {
            let mut c = ConfusionMatrix::new(REFERENCE_CONFUSION);
            c.counts[(k % 5) as usize][0] += 100 * k;
            mats.push(c);
        }
        let a = bootstrap_ci(&mats, 300, 11, OverallAccuracy::Raw).unwrap();
        let b = bootstrap_ci(&mats, 300, 11, OverallAccuracy::Raw).unwrap();
        assert_eq!(a, b);
        for i in a.intervals.values() {
            assert!(i.lower <= i.mean && i.mean <= i.upper);
        }
        let c = bootstrap_ci(&mats, 300, 12, OverallAccuracy::Raw).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_rows_are_counted() {
        let mut only_n2 = ConfusionMatrix::default();
        only_n2.counts[1][1] = 10;
        let full = ConfusionMatrix::new(REFERENCE_CONFUSION);
        let r = bootstrap_ci(&[only_n2, full], 100, 3, OverallAccuracy::Raw).unwrap();
        // Both indices equal to the N2-only matrix happens in about a quarter of samples.
        assert!(r.excluded > 0 && r.excluded < 100);
        assert_eq!(r.get("overall_accuracy").map(|_| ()), Some(()));
        assert!(bootstrap_ci(&[full], 10, 0, OverallAccuracy::Raw).is_err());
    }

    /// With two recordings a sample is {a,a}, {a,b} or {b,b}; every sample's
    /// metric must be one of those three values.
    #[test]
    fn two_recordings_enumerated() {
        let a = ConfusionMatrix::new(REFERENCE_CONFUSION);
        let mut b = a;
        for i in 0..5 {
            b.counts[i][i] *= 3;
        }
        let candidates: Vec<f64> = [a + a, a + b, b + b].iter().map(|c| class_metrics(c).unwrap().mean.f1).collect();
        let lo = candidates.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = candidates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let r = bootstrap_ci(&[a, b], 50, 5, OverallAccuracy::Raw).unwrap();
        let i = r.get("f1.mean").unwrap();
        assert!(lo <= i.mean && i.mean <= hi);
        for v in [i.lower, i.upper] {
            assert!(candidates.iter().any(|c| (c - v).abs() < 1e-12));
        }
    }
}
