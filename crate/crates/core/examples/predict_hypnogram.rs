//! Trains briefly, saves a checkpoint, reloads it and scores a held-out
//! recording, exporting expert and predicted hypnograms.
//!
//!     cargo run --release --example predict_hypnogram -- OUT_DIR

use somno::evaluation::{confusion, export_hypnogram, render_hypnogram_svg};
use somno::model::checkpoint::{load_checkpoint, save_checkpoint};
use somno::model::ModelConfig;
use somno::synthetic::band_corpus;
use somno::training::{folds_for, predict_recording, train_fold};

fn main() -> somno::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "predict-out".into()));
    std::fs::create_dir_all(&out).map_err(|e| somno::Error::io(&out, e))?;
    let recordings = band_corpus(6, 80, 60, 5.0, 4);
    let folds = folds_for(&recordings, 4)?;
    let config = ModelConfig { max_iterations: 500, ..ModelConfig::reduced() };
    let trained = train_fold::<f32>(&recordings, &folds[0], &config, 4)?;

    let ckpt = out.join("model.ckpt");
    save_checkpoint(&trained.params, &ckpt)?;
    let params = load_checkpoint::<f32>(&ckpt)?;

    let test = recordings.iter().find(|r| folds[0].test_subjects.contains(&r.subject_id)).expect("test subject");
    let predicted = predict_recording(&params, test)?;
    let expert = test.stages();
    let m = confusion(&predicted, &expert)?;
    println!("{}: {}/{} epochs agree", test.key(), m.trace(), m.total());

    export_hypnogram(&predicted, &out.join("predicted.csv"))?;
    export_hypnogram(&expert, &out.join("expert.csv"))?;
    let svg = render_hypnogram_svg(&[("expert", &expert), ("predicted", &predicted)]);
    let path = out.join("comparison.svg");
    std::fs::write(&path, svg).map_err(|e| somno::Error::io(&path, e))?;
    println!("hypnograms in {}", out.display());
    Ok(())
}
