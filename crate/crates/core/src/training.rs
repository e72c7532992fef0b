//! Per-fold training with class-balanced SGD, validation-based early stopping
//! and leave-one-subject-out cross-validation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{balanced_batch, class_pools, make_folds, make_folds_with, Corpus, DatasetError, FoldManifest, FoldSplit, WindowKey};
use crate::evaluation::report::RecordingOutcome;
use crate::evaluation::{class_metrics, confusion, sleep_efficiency, transitional_fraction, ConfusionMatrix};
use crate::ingest::Recording;
use crate::model::checkpoint::save_checkpoint;
use crate::model::{batch_gradients, forward, init_params, predict_from_probs, sgd_step, ModelConfig, ModelError, ModelParameters};
use crate::tensor::Real;
use crate::{Error, Result, SleepStage};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("fold {fold}: subject {subject:?} has no recordings")]
    MissingSubject { fold: usize, subject: String },
    #[error("fold {fold}: validation subjects have no epochs of stage {stage}")]
    ValidationMissingStage { fold: usize, stage: SleepStage },
    #[error("recording {recording} gives {got}-sample windows; the network expects {expected}")]
    WindowLength { recording: String, expected: usize, got: usize },
    #[error("non-finite loss or gradient at iteration {iteration} (batch drew from {provenance})")]
    NonFinite { iteration: usize, provenance: String },
    #[error("window from subject {subject:?} reached the {role} set of fold {fold}")]
    Provenance { fold: usize, subject: String, role: &'static str },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    /// Mean batch loss since the previous evaluation.
    pub training_loss: f64,
    pub validation_mean_f1: f64,
    pub validation_overall_accuracy: f64,
    /// Mean per-stage sensitivity on the validation set.
    pub validation_balanced_accuracy: f64,
    pub elapsed_s: f64,
    pub best: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EvalRecord>,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn best(&self) -> Option<&EvalRecord> {
        self.records.iter().find(|r| r.best)
    }

    /// History without wall-clock times, for determinism comparisons.
    pub fn without_timing(&self) -> TrainingHistory {
        let mut h = self.clone();
        h.records.iter_mut().for_each(|r| r.elapsed_s = 0.0);
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingPrediction {
    pub recording: String,
    pub expert: Vec<SleepStage>,
    pub predicted: Vec<SleepStage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub split: FoldManifest,
    /// Hash of the run configuration this fold was trained under.
    pub config_hash: String,
    pub checkpoint: Option<PathBuf>,
    pub test_matrix: ConfusionMatrix,
    pub recordings: Vec<RecordingOutcome>,
    pub predictions: Vec<RecordingPrediction>,
    pub history: TrainingHistory,
}

impl FoldResult {
    /// Per-recording matrices must add up to the fold matrix.
    pub fn check_partition(&self) -> bool {
        self.recordings.iter().map(|o| &o.matrix).sum::<ConfusionMatrix>() == self.test_matrix
    }
}

/// A fold result together with its best parameters.
pub struct TrainedFold<T> {
    pub result: FoldResult,
    pub params: ModelParameters<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationScore {
    pub mean_f1: f64,
    pub overall_accuracy: f64,
    pub balanced_accuracy: f64,
}

/// Most probable stage of every window, in key order.
pub fn predict_keys<T: Real>(params: &ModelParameters<T>, corpus: &Corpus<'_>, keys: &[WindowKey]) -> Result<Vec<SleepStage>> {
    keys.par_iter()
        .map(|&key| {
            let mut raw = vec![0f32; corpus.window_len(key)];
            corpus.write_signal(key, &mut raw);
            let signal: Vec<T> = raw.iter().map(|&v| T::from_sample(v)).collect();
            let (probs, _) = forward(params, &signal)?;
            Ok(predict_from_probs(probs.data()))
        })
        .collect()
}

/// Stage predictions for every scored epoch of one recording.
pub fn predict_recording<T: Real>(params: &ModelParameters<T>, recording: &Recording) -> Result<Vec<SleepStage>> {
    let recs = std::slice::from_ref(recording);
    let corpus = Corpus::new(recs);
    let keys: Vec<WindowKey> = corpus.keys_where(|_| true).into_iter().map(|(k, _)| k).collect();
    predict_keys(params, &corpus, &keys)
}

fn validation_score<T: Real>(
    params: &ModelParameters<T>,
    corpus: &Corpus<'_>,
    keys: &[(WindowKey, SleepStage)],
) -> Result<ValidationScore> {
    let just_keys: Vec<WindowKey> = keys.iter().map(|k| k.0).collect();
    let expert: Vec<SleepStage> = keys.iter().map(|k| k.1).collect();
    let predicted = predict_keys(params, corpus, &just_keys)?;
    let m = class_metrics(&confusion(&predicted, &expert)?)?;
    Ok(ValidationScore { mean_f1: m.mean.f1, overall_accuracy: m.overall_accuracy, balanced_accuracy: m.mean.sensitivity })
}

fn subject_set(subjects: &[String]) -> BTreeSet<&str> {
    subjects.iter().map(String::as_str).collect()
}

/// Confirms that every window used for a role comes from that role's subjects
/// and never from the test subjects.
fn check_provenance(corpus: &Corpus<'_>, fold: &FoldSplit, keys: &[(WindowKey, SleepStage)], role: &'static str) -> Result<(), TrainError> {
    let allowed = subject_set(if role == "training" { &fold.training_subjects } else { &fold.validation_subjects });
    let test = subject_set(&fold.test_subjects);
    for (k, _) in keys {
        let s = corpus.subject(*k);
        if !allowed.contains(s) || test.contains(s) {
            return Err(TrainError::Provenance { fold: fold.fold_index, subject: s.to_string(), role });
        }
    }
    Ok(())
}

/// Generator used for fold `fold` under `seed`.
pub fn fold_rng(seed: u64, fold: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64 + 1);
    rng
}

/// Trains one fold and scores its test recordings with the best-validation
/// parameters.
pub fn train_fold<T: Real>(recordings: &[Recording], fold: &FoldSplit, config: &ModelConfig, seed: u64) -> Result<TrainedFold<T>> {
    let corpus = Corpus::new(recordings);
    let val_keys = corpus.keys_for_subjects(&fold.validation_subjects);
    train_fold_with(recordings, fold, config, seed, |params| validation_score(params, &corpus, &val_keys))
}

/// [`train_fold`] with a caller-supplied validation scorer.
pub fn train_fold_with<T: Real>(
    recordings: &[Recording],
    fold: &FoldSplit,
    config: &ModelConfig,
    seed: u64,
    mut validate: impl FnMut(&ModelParameters<T>) -> Result<ValidationScore>,
) -> Result<TrainedFold<T>> {
    config.validate()?;
    let corpus = Corpus::new(recordings);
    for r in recordings {
        let got = crate::dataset::window_len(r);
        if got != config.input_len {
            return Err(TrainError::WindowLength { recording: r.key(), expected: config.input_len, got }.into());
        }
    }
    let present: BTreeSet<&str> = recordings.iter().map(|r| r.subject_id.as_str()).collect();
    for s in fold.test_subjects.iter().chain(&fold.validation_subjects).chain(&fold.training_subjects) {
        if !present.contains(s.as_str()) {
            return Err(TrainError::MissingSubject { fold: fold.fold_index, subject: s.clone() }.into());
        }
    }

    let train_keys = corpus.keys_for_subjects(&fold.training_subjects);
    let val_keys = corpus.keys_for_subjects(&fold.validation_subjects);
    check_provenance(&corpus, fold, &train_keys, "training")?;
    check_provenance(&corpus, fold, &val_keys, "validation")?;
    for s in SleepStage::ALL {
        if !val_keys.iter().any(|k| k.1 == s) {
            return Err(TrainError::ValidationMissingStage { fold: fold.fold_index, stage: s }.into());
        }
    }
    let index = class_pools(train_keys);
    index.require_all_stages()?;

    let mut rng = fold_rng(seed, fold.fold_index);
    let mut params: ModelParameters<T> = init_params(config, &mut rng)?;
    let mut best: Option<(f64, crate::model::LayerSet<T>, usize)> = None;
    let mut history = TrainingHistory::default();
    let mut stale = 0;
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    let start = Instant::now();

    for iteration in 1..=config.max_iterations {
        let batch = balanced_batch(&index, config.batch_size, &mut rng)?;
        let provenance = || {
            let subjects: BTreeSet<&str> = batch.iter().map(|k| corpus.subject(*k)).collect();
            subjects.into_iter().collect::<Vec<_>>().join(",")
        };
        let grads = match batch_gradients(&params, &corpus, &batch) {
            Ok(g) => g,
            Err(ModelError::NonFinite { .. }) => return Err(TrainError::NonFinite { iteration, provenance: provenance() }.into()),
            Err(e) => return Err(e.into()),
        };
        if !grads.loss().is_finite() {
            return Err(TrainError::NonFinite { iteration, provenance: provenance() }.into());
        }
        loss_sum += grads.loss();
        loss_n += 1;
        match sgd_step(&mut params, &grads.grads, config.learning_rate, config.momentum) {
            Ok(()) => {}
            Err(ModelError::NonFinite { .. }) => return Err(TrainError::NonFinite { iteration, provenance: provenance() }.into()),
            Err(e) => return Err(e.into()),
        }

        if iteration % config.eval_every == 0 || iteration == config.max_iterations {
            let score = validate(&params)?;
            history.records.push(EvalRecord {
                iteration,
                training_loss: loss_sum / loss_n as f64,
                validation_mean_f1: score.mean_f1,
                validation_overall_accuracy: score.overall_accuracy,
                validation_balanced_accuracy: score.balanced_accuracy,
                elapsed_s: start.elapsed().as_secs_f64(),
                best: false,
            });
            log::info!(
                "fold {} iter {iteration}: loss {:.4} val F1 {:.4} balanced acc {:.4}",
                fold.fold_index,
                loss_sum / loss_n as f64,
                score.mean_f1,
                score.balanced_accuracy
            );
            (loss_sum, loss_n) = (0.0, 0);
            if best.as_ref().is_none_or(|b| score.mean_f1 > b.0) {
                best = Some((score.mean_f1, params.weights.clone(), history.records.len() - 1));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }

    let (_, weights, best_index) = best.expect("at least one evaluation runs");
    history.records[best_index].best = true;
    params.weights = weights;
    params.velocity.fill(T::zero());

    let mut outcomes = Vec::new();
    let mut predictions = Vec::new();
    for (ri, rec) in recordings.iter().enumerate() {
        if !fold.test_subjects.contains(&rec.subject_id) {
            continue;
        }
        let keys: Vec<(WindowKey, SleepStage)> = corpus.keys_where(|r| std::ptr::eq(r, &recordings[ri]));
        let expert: Vec<SleepStage> = keys.iter().map(|k| k.1).collect();
        let predicted = predict_keys(&params, &corpus, &keys.iter().map(|k| k.0).collect::<Vec<_>>())?;
        outcomes.push(RecordingOutcome {
            recording: rec.key(),
            subject_id: rec.subject_id.clone(),
            matrix: confusion(&predicted, &expert)?,
            sleep_efficiency: sleep_efficiency(&expert, 0).ok(),
            transitional_pct: transitional_fraction(&expert, 0).ok(),
        });
        predictions.push(RecordingPrediction { recording: rec.key(), expert, predicted });
    }
    let test_matrix = outcomes.iter().map(|o| &o.matrix).sum();
    Ok(TrainedFold {
        result: FoldResult {
            fold_index: fold.fold_index,
            split: fold.manifest(seed),
            config_hash: config_hash(config),
            checkpoint: None,
            test_matrix,
            recordings: outcomes,
            predictions,
            history,
        },
        params,
    })
}

/// SHA-256 of the canonical JSON of `config`.
pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex(&Sha256::digest(&json))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of the inputs: subject, night, labels and samples of every
/// recording, in order.
pub fn input_hash(recordings: &[Recording]) -> String {
    let mut h = Sha256::new();
    for r in recordings {
        h.update(r.subject_id.as_bytes());
        h.update(r.night.to_le_bytes());
        for l in &r.epoch_labels {
            h.update([l.map_or(255, |s| s.index() as u8)]);
        }
        for v in &r.samples {
            h.update(v.to_le_bytes());
        }
    }
    hex(&h.finalize())
}

/// Unique subject ids in first-seen order.
pub fn subjects_of(recordings: &[Recording]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in recordings {
        if !out.contains(&r.subject_id) {
            out.push(r.subject_id.clone());
        }
    }
    out
}

/// Fold splits for a corpus: the standard twenty folds when there are twenty
/// subjects, otherwise one fold per subject with up to four validation subjects.
pub fn folds_for(recordings: &[Recording], seed: u64) -> Result<Vec<FoldSplit>, DatasetError> {
    let subjects = subjects_of(recordings);
    if subjects.len() == crate::dataset::FOLD_SUBJECTS {
        make_folds(&subjects, seed)
    } else {
        // At most half of the non-test subjects validate, so training keeps the majority.
        let val = crate::dataset::VALIDATION_SUBJECTS.min(subjects.len().saturating_sub(1) / 2).max(1);
        log::warn!("{} subjects: using {} folds with {val} validation subjects each", subjects.len(), subjects.len());
        make_folds_with(&subjects, val, seed)
    }
}

#[derive(Clone, Debug)]
pub struct CrossvalOptions {
    /// Fold indices to run; `None` runs all.
    pub folds: Option<Vec<usize>>,
    /// Folds trained concurrently.
    pub parallel: usize,
    /// Where `fold_XX.json`, `fold_XX.ckpt` and `manifest.json` go. Completed
    /// folds found here are reused instead of retrained.
    pub out_dir: Option<PathBuf>,
}

impl Default for CrossvalOptions {
    fn default() -> Self {
        CrossvalOptions { folds: None, parallel: 1, out_dir: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ModelConfig,
    pub config_hash: String,
    pub seed: u64,
    pub input_hash: String,
    pub recordings: Vec<String>,
    pub folds: Vec<FoldManifest>,
}

#[derive(Debug)]
pub struct CrossvalResult {
    pub folds: Vec<FoldResult>,
    /// Folds that failed, with their error.
    pub failures: Vec<(usize, String)>,
    pub aggregate: ConfusionMatrix,
}

pub fn fold_json_path(dir: &Path, fold: usize) -> PathBuf {
    dir.join(format!("fold_{fold:02}.json"))
}

pub fn fold_checkpoint_path(dir: &Path, fold: usize) -> PathBuf {
    dir.join(format!("fold_{fold:02}.ckpt"))
}

/// A previously written fold result that matches this run, if any.
fn completed_fold(dir: &Path, split: &FoldSplit, seed: u64, hash: &str) -> Option<FoldResult> {
    let text = std::fs::read_to_string(fold_json_path(dir, split.fold_index)).ok()?;
    let r: FoldResult = serde_json::from_str(&text).ok()?;
    (r.split == split.manifest(seed) && r.config_hash == hash).then_some(r)
}

pub fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    // Write-then-rename so an interrupted run never leaves a partial file.
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Leave-one-subject-out cross-validation. Folds are independent; a failing
/// fold is reported in `failures` and does not stop the others.
pub fn run_crossvalidation<T: Real>(
    recordings: &[Recording],
    config: &ModelConfig,
    seed: u64,
    options: &CrossvalOptions,
) -> Result<CrossvalResult> {
    config.validate()?;
    let splits = folds_for(recordings, seed)?;
    let selected: Vec<&FoldSplit> = match &options.folds {
        Some(list) => {
            for &f in list {
                if f >= splits.len() {
                    return Err(Error::Usage(format!("fold {f} out of range (0..{})", splits.len())));
                }
            }
            splits.iter().filter(|s| list.contains(&s.fold_index)).collect()
        }
        None => splits.iter().collect(),
    };
    let hash = config_hash(config);
    if let Some(dir) = &options.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = RunManifest {
            config: config.clone(),
            config_hash: hash.clone(),
            seed,
            input_hash: input_hash(recordings),
            recordings: recordings.iter().map(Recording::key).collect(),
            folds: splits.iter().map(|s| s.manifest(seed)).collect(),
        };
        write_json(&manifest, &dir.join("manifest.json"))?;
    }

    let run_one = |split: &FoldSplit| -> Result<FoldResult> {
        if let Some(dir) = &options.out_dir {
            if let Some(done) = completed_fold(dir, split, seed, &hash) {
                log::info!("fold {} already complete, skipped", split.fold_index);
                return Ok(done);
            }
        }
        let trained = train_fold::<T>(recordings, split, config, seed)?;
        let mut result = trained.result;
        if let Some(dir) = &options.out_dir {
            let ckpt = fold_checkpoint_path(dir, split.fold_index);
            save_checkpoint(&trained.params, &ckpt)?;
            result.checkpoint = Some(ckpt);
            write_json(&result, &fold_json_path(dir, split.fold_index))?;
        }
        Ok(result)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallel.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    let outcomes: Vec<(usize, Result<FoldResult>)> =
        pool.install(|| selected.par_iter().map(|s| (s.fold_index, run_one(s))).collect());

    let mut folds = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in outcomes {
        match r {
            Ok(f) => folds.push(f),
            Err(e) => {
                log::error!("fold {i} failed: {e}");
                failures.push((i, e.to_string()));
            }
        }
    }
    let aggregate = folds.iter().map(|f| &f.test_matrix).sum();
    Ok(CrossvalResult { folds, failures, aggregate })
}

/// Loads every `fold_XX.json` in `dir`, in fold order.
pub fn load_fold_results(dir: &Path) -> Result<Vec<FoldResult>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("fold_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(p, e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::band_corpus;

    fn small_config() -> ModelConfig {
        ModelConfig { max_iterations: 40, eval_every: 10, batch_size: 10, ..ModelConfig::reduced() }
    }

    fn corpus() -> Vec<Recording> {
        band_corpus(6, 60, 60, 2.0, 3)
    }

    #[test]
    fn same_seed_same_history() {
        let recs = corpus();
        let folds = folds_for(&recs, 1).unwrap();
        let a = train_fold::<f64>(&recs, &folds[0], &small_config(), 9).unwrap();
        let b = train_fold::<f64>(&recs, &folds[0], &small_config(), 9).unwrap();
        assert_eq!(a.result.history.without_timing(), b.result.history.without_timing());
        assert_eq!(a.params.weights, b.params.weights);
        assert_eq!(a.result.history.records.iter().filter(|r| r.best).count(), 1);
        assert!(a.result.check_partition());
        let iters: Vec<usize> = a.result.history.records.iter().map(|r| r.iteration).collect();
        assert!(iters.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn constant_metric_stops_at_second_evaluation() {
        let recs = corpus();
        let folds = folds_for(&recs, 1).unwrap();
        let config = ModelConfig { patience: 1, ..small_config() };
        let constant = |_: &ModelParameters<f64>| Ok(ValidationScore { mean_f1: 0.5, overall_accuracy: 0.5, balanced_accuracy: 0.5 });
        let t = train_fold_with(&recs, &folds[0], &config, 2, constant).unwrap();
        assert_eq!(t.result.history.records.len(), 2);
        assert!(t.result.history.stopped_early);
        assert!(t.result.history.records[0].best);
    }

    #[test]
    fn returns_best_not_last_parameters() {
        let recs = corpus();
        let folds = folds_for(&recs, 1).unwrap();
        let config = ModelConfig { patience: 100, ..small_config() };
        let mut scores = vec![0.2, 0.9, 0.1, 0.3].into_iter();
        let mut snapshots = Vec::new();
        let t = train_fold_with(&recs, &folds[0], &config, 2, |p: &ModelParameters<f64>| {
            snapshots.push(p.weights.clone());
            let s = scores.next().unwrap();
            Ok(ValidationScore { mean_f1: s, overall_accuracy: s, balanced_accuracy: s })
        })
        .unwrap();
        assert_eq!(t.params.weights, snapshots[1]);
        assert!(t.result.history.records[1].best);
    }

    #[test]
    fn provenance_rejects_leaks() {
        let recs = corpus();
        let folds = folds_for(&recs, 1).unwrap();
        let c = Corpus::new(&recs);
        let mut fold = folds[0].clone();
        let leak = c.keys_for_subjects(&fold.test_subjects);
        assert!(check_provenance(&c, &fold, &leak, "training").is_err());
        fold.training_subjects.push(fold.test_subjects[0].clone());
        let keys = c.keys_for_subjects(&fold.training_subjects);
        assert!(check_provenance(&c, &fold, &keys, "training").is_err());
    }

    #[test]
    fn crossval_aggregates_and_resumes() {
        let recs = corpus();
        let dir = tempfile::tempdir().unwrap();
        let opts = CrossvalOptions { folds: Some(vec![0, 2]), parallel: 2, out_dir: Some(dir.path().to_path_buf()) };
        let a = run_crossvalidation::<f32>(&recs, &small_config(), 4, &opts).unwrap();
        assert_eq!(a.folds.len(), 2);
        assert!(a.failures.is_empty());
        let sum: ConfusionMatrix = a.folds.iter().map(|f| f.test_matrix).sum();
        assert_eq!(sum, a.aggregate);
        assert!(dir.path().join("fold_00.ckpt").exists());

        // A second run reuses both stored folds bit for bit.
        let b = run_crossvalidation::<f32>(&recs, &small_config(), 4, &opts).unwrap();
        assert_eq!(a.aggregate, b.aggregate);
        assert_eq!(a.folds, b.folds);
        assert_eq!(load_fold_results(dir.path()).unwrap().len(), 2);
    }
}
