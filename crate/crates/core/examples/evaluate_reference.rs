//! Class-balanced metrics of a reference 5-stage confusion matrix, plus
//! bootstrap intervals over 39 recordings synthesized around it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use somno::evaluation::report::{confusion_csv, metrics_csv, stage_metrics_csv};
use somno::evaluation::{bootstrap_ci, class_metrics, ConfusionMatrix, OverallAccuracy};
use somno::synthetic::REFERENCE_CONFUSION;

fn main() -> Result<(), somno::evaluation::EvalError> {
    let total = ConfusionMatrix::new(REFERENCE_CONFUSION);
    let metrics = class_metrics(&total)?;
    print!("{}", confusion_csv(&total));
    println!();
    print!("{}", stage_metrics_csv(&metrics));
    println!();

    // Split the counts over 39 recordings at random to get something to resample.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut per = vec![ConfusionMatrix::default(); 39];
    for (i, row) in REFERENCE_CONFUSION.iter().enumerate() {
        for (j, &n) in row.iter().enumerate() {
            for _ in 0..n {
                per[rng.random_range(0..39)].counts[i][j] += 1;
            }
        }
    }
    let boot = bootstrap_ci(&per, 1000, 1, OverallAccuracy::Raw)?;
    print!("{}", metrics_csv(&metrics, Some(&boot)));
    Ok(())
}
