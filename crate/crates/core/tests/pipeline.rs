use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use somno::dataset::{balanced_batch, class_pools, Corpus, WindowKey};
use somno::evaluation::report::{evaluate, write_report, EvaluationOptions};
use somno::filters::{class_activation_matrix, export_profile, filter_spectra, parse_profile_csv, ActivationProfile, ActivationTap, Norm};
use somno::model::checkpoint::{load_checkpoint, save_checkpoint};
use somno::model::ModelConfig;
use somno::synthetic::band_corpus;
use somno::training::{folds_for, predict_recording, run_crossvalidation, train_fold, CrossvalOptions};
use somno::SleepStage;

fn config() -> ModelConfig {
    ModelConfig { max_iterations: 200, eval_every: 50, batch_size: 25, ..ModelConfig::reduced() }
}

#[test]
fn crossval_to_report() {
    let recordings = band_corpus(5, 50, 60, 3.0, 21);
    let dir = tempfile::tempdir().unwrap();
    let opts = CrossvalOptions { folds: None, parallel: 1, out_dir: Some(dir.path().to_path_buf()) };
    let result = run_crossvalidation::<f32>(&recordings, &config(), 2, &opts).unwrap();
    assert_eq!(result.folds.len(), 5);
    assert!(result.failures.is_empty());

    // Every epoch is tested exactly once across folds.
    let scored: u64 = recordings.iter().map(|r| r.epoch_labels.len() as u64).sum();
    assert_eq!(result.aggregate.total(), scored);
    for f in &result.folds {
        assert!(f.check_partition());
        assert_eq!(f.split.test.len(), 1);
    }

    let outcomes: Vec<_> = result.folds.iter().flat_map(|f| f.recordings.clone()).collect();
    let report = evaluate(&outcomes, EvaluationOptions { bootstrap_samples: 100, seed: 3, ..Default::default() }).unwrap();
    assert_eq!(report.aggregate, result.aggregate);
    assert!(report.metrics.mean.f1 > 0.8, "{:?}", report.metrics.mean);
    let out = dir.path().join("eval");
    write_report(&report, &out).unwrap();
    assert_eq!(std::fs::read_to_string(out.join("confusion.csv")).unwrap().lines().count(), 6);
}

#[test]
fn checkpoint_preserves_predictions() {
    let recordings = band_corpus(5, 60, 60, 3.0, 8);
    let folds = folds_for(&recordings, 1).unwrap();
    let trained = train_fold::<f64>(&recordings, &folds[0], &config(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&trained.params, &path).unwrap();
    let loaded = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(loaded.weights, trained.params.weights);
    for r in &recordings {
        assert_eq!(predict_recording(&loaded, r).unwrap(), predict_recording(&trained.params, r).unwrap());
    }
    let stored = &trained.result.predictions[0];
    let test = recordings.iter().find(|r| r.key() == stored.recording).unwrap();
    assert_eq!(predict_recording(&loaded, test).unwrap(), stored.predicted);
}

#[test]
fn trained_filters_export() {
    let recordings = band_corpus(5, 60, 60, 3.0, 9);
    let folds = folds_for(&recordings, 1).unwrap();
    let trained = train_fold::<f32>(&recordings, &folds[0], &config(), 1).unwrap();
    let corpus = Corpus::new(&recordings);
    let keys: Vec<WindowKey> = corpus.keys_where(|_| true).into_iter().map(|k| k.0).collect();
    let raw = class_activation_matrix(&trained.params, &corpus, &keys, ActivationTap::PostRelu).unwrap();
    let profile = ActivationProfile::from_raw(raw, Norm::L2);
    let spectra = filter_spectra(&trained.params, somno::SAMPLING_RATE_HZ);
    let dir = tempfile::tempdir().unwrap();
    export_profile(&profile, &spectra, Some(0), dir.path()).unwrap();
    let back = parse_profile_csv(&std::fs::read_to_string(dir.path().join("profile.csv")).unwrap()).unwrap();
    assert_eq!(back.len(), 4);
    let mut sorted = profile.ordering.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, vec![0, 1, 2, 3]);
}

#[test]
fn morlet_checkpoint_keeps_bank_spectra() {
    use somno::filters::filter_power_spectrum;
    use somno::model::{init_params, make_morlet_bank, FirstLayerMode};
    let config = ModelConfig { first_layer: FirstLayerMode::FixedMorlet, ..ModelConfig::reduced() };
    let params = init_params::<f64, _>(&config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&params, &dir.path().join("m.ckpt")).unwrap();
    let loaded = load_checkpoint::<f64>(&dir.path().join("m.ckpt")).unwrap();
    assert!(loaded.c1_frozen);
    let freqs = config.morlet.frequencies(config.c1_filters);
    let bank = make_morlet_bank::<f64>(&freqs, config.morlet.cycles, somno::SAMPLING_RATE_HZ, config.c1_len).unwrap();
    let spectra = filter_spectra(&loaded, somno::SAMPLING_RATE_HZ);
    for (f, s) in spectra.iter().enumerate() {
        let kernel = &bank.kernels.data()[f * config.c1_len..(f + 1) * config.c1_len];
        assert_eq!(s.power, filter_power_spectrum(kernel));
    }
}

proptest! {
    #[test]
    fn batches_are_balanced(sizes in prop::array::uniform5(1usize..40), per in 1usize..8, seed in any::<u64>()) {
        let windows: Vec<(WindowKey, SleepStage)> = SleepStage::ALL
            .iter()
            .flat_map(|&s| (0..sizes[s.index()]).map(move |e| (WindowKey { recording: s.index(), epoch: e }, s)))
            .collect();
        let index = class_pools(windows.iter().copied());
        prop_assert_eq!(index.len(), windows.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = balanced_batch(&index, 5 * per, &mut rng).unwrap();
        for s in SleepStage::ALL {
            prop_assert_eq!(batch.iter().filter(|k| k.recording == s.index()).count(), per);
        }
        prop_assert!(batch.iter().all(|k| k.epoch < sizes[k.recording]));
    }
}
