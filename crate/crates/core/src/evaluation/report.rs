//! Aggregation of per-recording outcomes into confusion-matrix, metric and
//! regression tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    bootstrap_ci, class_metrics, class_metrics_with, linreg_r2, row_normalize, BootstrapResult, ClassMetrics, ConfusionMatrix,
    EvalError, OverallAccuracy, RegressionResult, METRIC_NAMES,
};
use crate::{Error, Result, SleepStage};

/// Test-set outcome of one recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingOutcome {
    pub recording: String,
    pub subject_id: String,
    pub matrix: ConfusionMatrix,
    /// From the expert hypnogram.
    pub sleep_efficiency: Option<f64>,
    pub transitional_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub metric: String,
    pub efficiency: Option<RegressionResult>,
    pub transitional: Option<RegressionResult>,
    /// Recordings left out because a stage was missing or a statistic was undefined.
    pub excluded: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOptions {
    pub bootstrap_samples: usize,
    pub seed: u64,
    pub overall: OverallAccuracy,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        EvaluationOptions { bootstrap_samples: 1000, seed: 0, overall: OverallAccuracy::Raw }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub options: EvaluationOptions,
    pub recordings: usize,
    pub aggregate: ConfusionMatrix,
    pub metrics: ClassMetrics,
    pub bootstrap: Option<BootstrapResult>,
    pub regressions: Vec<RegressionRow>,
}

/// Per-recording scores used as regression targets: mean F1 and overall
/// accuracy, `None` when the recording lacks a stage.
fn recording_scores(o: &RecordingOutcome, overall: OverallAccuracy) -> Option<(f64, f64)> {
    class_metrics_with(&o.matrix, overall).ok().map(|m| (m.mean.f1, m.overall_accuracy))
}

fn regress(points: &[(f64, f64)]) -> Option<RegressionResult> {
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    linreg_r2(&x, &y).ok()
}

pub fn regressions(outcomes: &[RecordingOutcome], overall: OverallAccuracy) -> Vec<RegressionRow> {
    ["f1", "overall_accuracy"]
        .iter()
        .enumerate()
        .map(|(k, &metric)| {
            let mut eff = Vec::new();
            let mut trans = Vec::new();
            let mut excluded = 0;
            for o in outcomes {
                let (Some(score), Some(e), Some(t)) = (recording_scores(o, overall), o.sleep_efficiency, o.transitional_pct) else {
                    excluded += 1;
                    continue;
                };
                let s = if k == 0 { score.0 } else { score.1 };
                eff.push((e, s));
                trans.push((t, s));
            }
            RegressionRow { metric: metric.into(), efficiency: regress(&eff), transitional: regress(&trans), excluded }
        })
        .collect()
}

pub fn evaluate(outcomes: &[RecordingOutcome], options: EvaluationOptions) -> Result<EvaluationReport, EvalError> {
    let aggregate: ConfusionMatrix = outcomes.iter().map(|o| &o.matrix).sum();
    let metrics = class_metrics_with(&aggregate, options.overall)?;
    let matrices: Vec<ConfusionMatrix> = outcomes.iter().map(|o| o.matrix).collect();
    let bootstrap = if options.bootstrap_samples > 0 && matrices.len() >= 2 {
        Some(bootstrap_ci(&matrices, options.bootstrap_samples, options.seed, options.overall)?)
    } else {
        None
    };
    Ok(EvaluationReport {
        options,
        recordings: outcomes.len(),
        aggregate,
        metrics,
        bootstrap,
        regressions: regressions(outcomes, options.overall),
    })
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Counts with row percentages, expert stages down, predicted stages across.
pub fn confusion_csv(c: &ConfusionMatrix) -> String {
    let r = row_normalize(c);
    let mut out = String::from("expert");
    for s in SleepStage::ALL {
        out.push_str(&format!(",{s}"));
    }
    for s in SleepStage::ALL {
        out.push_str(&format!(",{s}_pct"));
    }
    out.push('\n');
    for s in SleepStage::ALL {
        out.push_str(s.name());
        for v in c.counts[s.index()] {
            out.push_str(&format!(",{v}"));
        }
        for v in r.rows[s.index()] {
            out.push_str(&format!(",{}", pct(v)));
        }
        out.push('\n');
    }
    out
}

/// Mean and worst stage per metric, in percent, with bootstrap bounds when
/// available.
pub fn metrics_csv(metrics: &ClassMetrics, bootstrap: Option<&BootstrapResult>) -> String {
    let mut out = String::from("metric,mean,mean_lower,mean_upper,worst,worst_lower,worst_upper\n");
    let named: std::collections::HashMap<String, f64> = metrics.named_values().into_iter().collect();
    let bounds = |key: &str| match bootstrap.and_then(|b| b.get(key)) {
        Some(i) => (pct(i.lower), pct(i.upper)),
        None => (String::new(), String::new()),
    };
    for name in METRIC_NAMES {
        let (ml, mu) = bounds(&format!("{name}.mean"));
        let (wl, wu) = bounds(&format!("{name}.worst"));
        out.push_str(&format!(
            "{name},{},{ml},{mu},{},{wl},{wu}\n",
            pct(named[&format!("{name}.mean")]),
            pct(named[&format!("{name}.worst")])
        ));
    }
    let (l, u) = bounds("overall_accuracy");
    out.push_str(&format!("overall_accuracy,{},{l},{u},,,\n", pct(metrics.overall_accuracy)));
    out
}

pub fn regression_csv(rows: &[RegressionRow]) -> String {
    let mut out = String::from("metric,efficiency_r2,efficiency_p,transitional_r2,transitional_p\n");
    let cell = |r: &Option<RegressionResult>| match r {
        Some(r) => (format!("{:.3}", r.r2), format!("{:.3}", r.p_value)),
        None => (String::new(), String::new()),
    };
    for row in rows {
        let (er, ep) = cell(&row.efficiency);
        let (tr, tp) = cell(&row.transitional);
        out.push_str(&format!("{},{er},{ep},{tr},{tp}\n", row.metric));
    }
    out
}

/// Per-stage point metrics in percent.
pub fn stage_metrics_csv(metrics: &ClassMetrics) -> String {
    let mut out = String::from("stage,precision,sensitivity,f1,accuracy\n");
    for s in SleepStage::ALL {
        let m = metrics.stage(s);
        out.push_str(&format!("{s},{},{},{},{}\n", pct(m.precision), pct(m.sensitivity), pct(m.f1), pct(m.accuracy)));
    }
    out
}

/// Writes `report.json` plus `confusion.csv`, `metrics.csv`,
/// `stage_metrics.csv` and `regression.csv` into `dir`.
pub fn write_report(report: &EvaluationReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::json(&json, e))?;
    let files = [
        (json, text),
        (dir.join("confusion.csv"), confusion_csv(&report.aggregate)),
        (dir.join("metrics.csv"), metrics_csv(&report.metrics, report.bootstrap.as_ref())),
        (dir.join("stage_metrics.csv"), stage_metrics_csv(&report.metrics)),
        (dir.join("regression.csv"), regression_csv(&report.regressions)),
    ];
    for (path, text) in files {
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Point metrics of a raw matrix, for callers that only hold counts.
pub fn metrics_for_counts(counts: [[u64; 5]; 5]) -> Result<ClassMetrics, EvalError> {
    class_metrics(&ConfusionMatrix::new(counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::REFERENCE_CONFUSION;

    #[test]
    fn table_shapes_and_rounding() {
        let c = ConfusionMatrix::new(REFERENCE_CONFUSION);
        let csv = confusion_csv(&c);
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.lines().nth(1).unwrap().starts_with("N1,1657,259,9,427,410,60.0,9.4,0.3,15.5,14.8"));
        let m = class_metrics(&c).unwrap();
        let csv = metrics_csv(&m, None);
        assert!(csv.contains("precision,91.5,,,85.7,,"), "{csv}");
        assert!(csv.contains("overall_accuracy,74.8,"));
    }

    #[test]
    fn evaluate_aggregates_and_regresses() {
        let base = ConfusionMatrix::new(REFERENCE_CONFUSION);
        let outcomes: Vec<RecordingOutcome> = (0..6)
            .map(|i| {
                let mut m = base;
                m.counts[0][0] += 50 * i;
                RecordingOutcome {
                    recording: format!("r{i}"),
                    subject_id: format!("{i:02}"),
                    matrix: m,
                    sleep_efficiency: Some(80.0 + i as f64),
                    transitional_pct: Some(10.0 + (i % 3) as f64),
                }
            })
            .collect();
        let report = evaluate(&outcomes, EvaluationOptions { bootstrap_samples: 50, ..Default::default() }).unwrap();
        let total: u64 = outcomes.iter().map(|o| o.matrix.total()).sum();
        assert_eq!(report.aggregate.total(), total);
        assert_eq!(report.regressions.len(), 2);
        assert!(report.regressions[0].efficiency.unwrap().slope > 0.0);
        let dir = tempfile::tempdir().unwrap();
        write_report(&report, dir.path()).unwrap();
        let back: EvaluationReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back.aggregate, report.aggregate);
    }
}
