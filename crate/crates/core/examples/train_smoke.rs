//! Trains the reduced network on band-coded synthetic recordings and prints
//! the validation history.
//!
//!     cargo run --release --example train_smoke -- [seed]

use somno::model::ModelConfig;
use somno::synthetic::band_corpus;
use somno::training::{folds_for, train_fold};

fn main() -> somno::Result<()> {
    env_logger::init();
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let recordings = band_corpus(10, 80, 60, 2.0, seed);
    let folds = folds_for(&recordings, seed)?;
    let config = ModelConfig { seed, ..ModelConfig::reduced() };
    let trained = train_fold::<f32>(&recordings, &folds[0], &config, seed)?;
    println!("iter  loss     val_f1  val_bal_acc");
    for r in &trained.result.history.records {
        println!(
            "{:5} {:8.4} {:6.3}  {:6.3}{}",
            r.iteration,
            r.training_loss,
            r.validation_mean_f1,
            r.validation_balanced_accuracy,
            if r.best { "  *" } else { "" }
        );
    }
    let m = &trained.result.test_matrix;
    println!("test subject {:?}: {}/{} epochs correct", folds[0].test_subjects, m.trace(), m.total());
    Ok(())
}
