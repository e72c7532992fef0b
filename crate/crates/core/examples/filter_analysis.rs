//! First-layer filter analysis: spectra of a Morlet bank and per-stage
//! activation profiles on band-coded windows, exported as CSV and SVG.
//!
//!     cargo run --release --example filter_analysis -- OUT_DIR

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use somno::dataset::Corpus;
use somno::filters::{class_activation_matrix, export_profile, filter_spectra, ActivationProfile, ActivationTap, Norm};
use somno::model::{init_params, FirstLayerMode, ModelConfig, ModelParameters, MorletConfig};
use somno::synthetic::{band_recording, stage_sequence};

fn main() -> somno::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "filters-out".into()));
    let config = ModelConfig {
        input_len: 2000,
        c1_filters: 10,
        c1_len: 200,
        first_layer: FirstLayerMode::FixedMorlet,
        morlet: MorletConfig { min_hz: 1.0, max_hz: 35.0, cycles: 4.0, ..Default::default() },
        ..ModelConfig::reduced()
    };
    let params: ModelParameters<f64> = init_params(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let recordings: Vec<_> =
        (0..4).map(|i| band_recording(&format!("s{i}"), 1, &stage_sequence(50, &mut rng), 400, 3.0, i)).collect();
    let corpus = Corpus::new(&recordings);
    let keys: Vec<_> = corpus.keys_where(|_| true).into_iter().map(|k| k.0).collect();

    let raw = class_activation_matrix(&params, &corpus, &keys, ActivationTap::PostRelu)?;
    let profile = ActivationProfile::from_raw(raw, Norm::L2);
    let spectra = filter_spectra(&params, somno::SAMPLING_RATE_HZ);
    println!("filter  peak_hz  N1    N2    N3    R     W");
    for &f in &profile.ordering {
        let s = &spectra[f];
        let peak = (0..s.power.len()).max_by(|&a, &b| s.power[a].total_cmp(&s.power[b])).unwrap_or(0);
        let row = profile.normalized.matrix[f].map(|v| format!("{v:.2}"));
        println!("{f:6}  {:7.1}  {}", peak as f64 * s.bin_hz, row.join("  "));
    }
    for p in export_profile(&profile, &spectra, None, &out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
