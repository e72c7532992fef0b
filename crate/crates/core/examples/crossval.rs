//! Leave-one-subject-out cross-validation on band-coded recordings, with
//! resumable per-fold output and the aggregate evaluation report.
//!
//!     cargo run --release --example crossval -- OUT_DIR [parallel]

use somno::evaluation::report::{evaluate, write_report, EvaluationOptions};
use somno::model::ModelConfig;
use somno::synthetic::band_corpus;
use somno::training::{run_crossvalidation, CrossvalOptions};

fn main() -> somno::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "crossval-out".into()));
    let parallel = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);

    let recordings = band_corpus(8, 80, 60, 5.0, 7);
    let config = ModelConfig { max_iterations: 600, ..ModelConfig::reduced() };
    let options = CrossvalOptions { folds: None, parallel, out_dir: Some(out.clone()) };
    let result = run_crossvalidation::<f32>(&recordings, &config, 7, &options)?;
    for f in &result.folds {
        println!("fold {} test {:?}: {}/{} correct", f.fold_index, f.split.test, f.test_matrix.trace(), f.test_matrix.total());
    }

    let outcomes: Vec<_> = result.folds.iter().flat_map(|f| f.recordings.clone()).collect();
    let report = evaluate(&outcomes, EvaluationOptions { bootstrap_samples: 500, seed: 7, ..Default::default() })?;
    write_report(&report, &out.join("evaluation"))?;
    println!("mean F1 {:.3}, overall accuracy {:.3}", report.metrics.mean.f1, report.metrics.overall_accuracy);
    Ok(())
}
