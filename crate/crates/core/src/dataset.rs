//! Context windows, class pools, class-balanced batches and subject folds.
//!
//! Windows are addressed by [`WindowKey`] and cut from their recording only
//! when needed, so memory stays proportional to the signal, not to
//! `windows × window length`.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Recording;
use crate::{SleepStage, CONTEXT_EPOCHS};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("batch size {0} is not a positive multiple of 5")]
    BatchSize(usize),
    #[error("no training windows for stage {0}")]
    EmptyPool(SleepStage),
    #[error("expected {expected} subjects, got {got}")]
    SubjectCount { expected: usize, got: usize },
    #[error("duplicate subject id {0:?}")]
    DuplicateSubject(String),
}

/// Epochs on each side of the scored epoch.
const HALF_CONTEXT: usize = CONTEXT_EPOCHS / 2;

/// A scored epoch of one recording within a recording slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowKey {
    pub recording: usize,
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSource {
    pub subject_id: String,
    pub night: u32,
    /// Epoch index in the original (untrimmed) recording.
    pub epoch_index: usize,
}

/// A materialized context window.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledWindow {
    pub signal: Vec<f32>,
    pub label: SleepStage,
    pub source: WindowSource,
}

/// Index of the epoch whose samples fill context slot `slot` (0..5) for
/// `epoch`. Slots past either end replicate the nearest existing epoch.
fn context_epoch(epoch: usize, slot: usize, epochs: usize) -> usize {
    (epoch + slot).saturating_sub(HALF_CONTEXT).min(epochs - 1)
}

/// Writes the five-epoch context of `epoch` into `out`
/// (`CONTEXT_EPOCHS * recording.epoch_len` samples).
pub fn write_window(recording: &Recording, epoch: usize, out: &mut [f32]) {
    let len = recording.epoch_len;
    assert_eq!(out.len(), CONTEXT_EPOCHS * len, "window buffer has the wrong length");
    for (slot, chunk) in out.chunks_exact_mut(len).enumerate() {
        chunk.copy_from_slice(recording.epoch(context_epoch(epoch, slot, recording.epoch_count())));
    }
}

pub fn window_len(recording: &Recording) -> usize {
    CONTEXT_EPOCHS * recording.epoch_len
}

/// One window per scored epoch, in epoch order.
pub fn build_windows(recording: &Recording) -> Vec<LabeledWindow> {
    recording
        .epoch_labels
        .iter()
        .enumerate()
        .filter_map(|(epoch, label)| {
            let label = (*label)?;
            let mut signal = vec![0.0; window_len(recording)];
            write_window(recording, epoch, &mut signal);
            Some(LabeledWindow {
                signal,
                label,
                source: WindowSource {
                    subject_id: recording.subject_id.clone(),
                    night: recording.night,
                    epoch_index: recording.source_epochs[epoch],
                },
            })
        })
        .collect()
}

/// Read-only view over a set of recordings that resolves [`WindowKey`]s.
#[derive(Clone, Copy, Debug)]
pub struct Corpus<'a> {
    pub recordings: &'a [Recording],
}

impl<'a> Corpus<'a> {
    pub fn new(recordings: &'a [Recording]) -> Self {
        Corpus { recordings }
    }

    /// Keys of every scored epoch of the recordings whose subject passes `keep`.
    pub fn keys_where(&self, mut keep: impl FnMut(&Recording) -> bool) -> Vec<(WindowKey, SleepStage)> {
        let mut out = Vec::new();
        for (r, rec) in self.recordings.iter().enumerate() {
            if !keep(rec) {
                continue;
            }
            for (epoch, label) in rec.epoch_labels.iter().enumerate() {
                if let Some(l) = label {
                    out.push((WindowKey { recording: r, epoch }, *l));
                }
            }
        }
        out
    }

    pub fn keys_for_subjects(&self, subjects: &[String]) -> Vec<(WindowKey, SleepStage)> {
        let set: HashSet<&str> = subjects.iter().map(String::as_str).collect();
        self.keys_where(|r| set.contains(r.subject_id.as_str()))
    }

    pub fn label(&self, key: WindowKey) -> Option<SleepStage> {
        self.recordings[key.recording].epoch_labels[key.epoch]
    }

    pub fn subject(&self, key: WindowKey) -> &str {
        &self.recordings[key.recording].subject_id
    }

    pub fn window_len(&self, key: WindowKey) -> usize {
        window_len(&self.recordings[key.recording])
    }

    pub fn write_signal(&self, key: WindowKey, out: &mut [f32]) {
        write_window(&self.recordings[key.recording], key.epoch, out);
    }

    pub fn window(&self, key: WindowKey) -> LabeledWindow {
        let rec = &self.recordings[key.recording];
        let mut signal = vec![0.0; window_len(rec)];
        write_window(rec, key.epoch, &mut signal);
        LabeledWindow {
            signal,
            label: rec.epoch_labels[key.epoch].expect("window keys address scored epochs"),
            source: WindowSource {
                subject_id: rec.subject_id.clone(),
                night: rec.night,
                epoch_index: rec.source_epochs[key.epoch],
            },
        }
    }
}

/// Training windows grouped by stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetIndex {
    pools: [Vec<WindowKey>; SleepStage::COUNT],
}

impl DatasetIndex {
    pub fn pool(&self, stage: SleepStage) -> &[WindowKey] {
        &self.pools[stage.index()]
    }

    pub fn sizes(&self) -> [usize; SleepStage::COUNT] {
        std::array::from_fn(|i| self.pools[i].len())
    }

    pub fn len(&self) -> usize {
        self.pools.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Errors with the first stage that has no windows.
    pub fn require_all_stages(&self) -> Result<(), DatasetError> {
        match SleepStage::ALL.iter().find(|s| self.pools[s.index()].is_empty()) {
            Some(s) => Err(DatasetError::EmptyPool(*s)),
            None => Ok(()),
        }
    }
}

pub fn class_pools(windows: impl IntoIterator<Item = (WindowKey, SleepStage)>) -> DatasetIndex {
    let mut index = DatasetIndex::default();
    for (key, stage) in windows {
        index.pools[stage.index()].push(key);
    }
    index
}

/// Draws `batch_size / 5` windows per stage, uniformly with replacement
/// within each pool, then shuffles the batch.
pub fn balanced_batch<R: Rng + ?Sized>(
    index: &DatasetIndex,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<WindowKey>, DatasetError> {
    if batch_size == 0 || !batch_size.is_multiple_of(SleepStage::COUNT) {
        return Err(DatasetError::BatchSize(batch_size));
    }
    index.require_all_stages()?;
    let per_stage = batch_size / SleepStage::COUNT;
    let mut batch = Vec::with_capacity(batch_size);
    for pool in &index.pools {
        for _ in 0..per_stage {
            batch.push(pool[rng.random_range(0..pool.len())]);
        }
    }
    batch.shuffle(rng);
    Ok(batch)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub test_subjects: Vec<String>,
    pub validation_subjects: Vec<String>,
    pub training_subjects: Vec<String>,
}

impl FoldSplit {
    pub fn manifest(&self, seed: u64) -> FoldManifest {
        FoldManifest {
            fold: self.fold_index,
            test: self.test_subjects.clone(),
            val: self.validation_subjects.clone(),
            train: self.training_subjects.clone(),
            seed,
        }
    }
}

/// JSON form of a fold split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldManifest {
    pub fold: usize,
    pub test: Vec<String>,
    pub val: Vec<String>,
    pub train: Vec<String>,
    pub seed: u64,
}

pub const FOLD_SUBJECTS: usize = 20;
pub const VALIDATION_SUBJECTS: usize = 4;

/// Twenty leave-one-subject-out folds: fold `i` tests subject `i`, four of the
/// remaining nineteen validate, fifteen train.
pub fn make_folds(subjects: &[String], seed: u64) -> Result<Vec<FoldSplit>, DatasetError> {
    if subjects.len() != FOLD_SUBJECTS {
        return Err(DatasetError::SubjectCount { expected: FOLD_SUBJECTS, got: subjects.len() });
    }
    make_folds_with(subjects, VALIDATION_SUBJECTS, seed)
}

/// Leave-one-subject-out folds for any subject count with `validation`
/// validation subjects per fold.
pub fn make_folds_with(subjects: &[String], validation: usize, seed: u64) -> Result<Vec<FoldSplit>, DatasetError> {
    let mut seen = HashSet::new();
    for s in subjects {
        if !seen.insert(s) {
            return Err(DatasetError::DuplicateSubject(s.clone()));
        }
    }
    if subjects.len() < validation + 2 {
        return Err(DatasetError::SubjectCount { expected: validation + 2, got: subjects.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(subjects
        .iter()
        .enumerate()
        .map(|(i, test)| {
            let rest: Vec<&String> = subjects.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, s)| s).collect();
            let mut picked = rand::seq::index::sample(&mut rng, rest.len(), validation).into_vec();
            let validation_subjects = picked.iter().map(|&j| rest[j].clone()).collect();
            picked.sort_unstable();
            let training_subjects = rest
                .iter()
                .enumerate()
                .filter(|(j, _)| picked.binary_search(j).is_err())
                .map(|(_, s)| (*s).clone())
                .collect();
            FoldSplit { fold_index: i, test_subjects: vec![test.clone()], validation_subjects, training_subjects }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(epochs: usize, epoch_len: usize) -> Recording {
        let samples = (0..epochs * epoch_len).map(|i| (i / epoch_len) as f32).collect();
        let labels = (0..epochs).map(|i| SleepStage::from_index(i % 5)).collect();
        Recording::from_epochs("s", 1, samples, labels, epoch_len).unwrap()
    }

    #[test]
    fn one_window_per_scored_epoch() {
        let r = rec(10, 3000);
        let w = build_windows(&r);
        assert_eq!(w.len(), 10);
        assert!(w.iter().all(|w| w.signal.len() == 15000));
    }

    #[test]
    fn boundary_replication() {
        let r = rec(10, 3000);
        let w = &build_windows(&r)[0];
        let expect: Vec<f32> = [0, 0, 0, 1, 2].iter().flat_map(|&e| std::iter::repeat_n(e as f32, 3000)).collect();
        assert_eq!(w.signal, expect);
        let last = &build_windows(&r)[9];
        let expect: Vec<f32> = [7, 8, 9, 9, 9].iter().flat_map(|&e| std::iter::repeat_n(e as f32, 3000)).collect();
        assert_eq!(last.signal, expect);
    }

    #[test]
    fn interior_window_is_verbatim_concatenation() {
        let r = rec(10, 3000);
        let w = &build_windows(&r)[5];
        assert_eq!(&w.signal[..], &r.samples[3 * 3000..8 * 3000]);
        assert_eq!(&w.signal[6000..9000], r.epoch(5));
    }

    #[test]
    fn single_epoch_recording_replicates() {
        let r = rec(1, 10);
        let w = build_windows(&r);
        assert_eq!(w[0].signal, vec![0.0; 50]);
    }

    #[test]
    fn unscored_epochs_get_no_window() {
        let mut r = rec(4, 10);
        r.epoch_labels[2] = None;
        let w = build_windows(&r);
        assert_eq!(w.len(), 3);
    }

    #[test]
    fn pools_partition_by_label() {
        let keys = [SleepStage::N1, SleepStage::N2, SleepStage::N1]
            .into_iter()
            .enumerate()
            .map(|(i, s)| (WindowKey { recording: 0, epoch: i }, s));
        let idx = class_pools(keys);
        assert_eq!(idx.sizes(), [2, 1, 0, 0, 0]);
        assert!(class_pools(std::iter::empty()).is_empty());
    }

    fn full_index(sizes: [usize; 5]) -> DatasetIndex {
        let mut k = 0;
        class_pools(SleepStage::ALL.iter().flat_map(|s| {
            let n = sizes[s.index()];
            let keys: Vec<_> = (0..n)
                .map(|_| {
                    k += 1;
                    (WindowKey { recording: 0, epoch: k }, *s)
                })
                .collect();
            keys
        }))
    }

    #[test]
    fn batch_histogram_and_replacement() {
        let idx = full_index([1, 50, 20, 30, 40]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = balanced_batch(&idx, 10, &mut rng).unwrap();
        let lone = idx.pool(SleepStage::N1)[0];
        assert_eq!(b.iter().filter(|k| **k == lone).count(), 2);
        let b = balanced_batch(&idx, 100, &mut rng).unwrap();
        assert_eq!(b.len(), 100);
    }

    #[test]
    fn batch_errors() {
        let idx = full_index([1, 2, 3, 4, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(balanced_batch(&idx, 7, &mut rng), Err(DatasetError::BatchSize(7))));
        assert!(matches!(balanced_batch(&idx, 0, &mut rng), Err(DatasetError::BatchSize(0))));
        let idx = full_index([3, 2, 0, 4, 5]);
        assert!(matches!(balanced_batch(&idx, 10, &mut rng), Err(DatasetError::EmptyPool(SleepStage::N3))));
    }

    #[test]
    fn batches_reproducible() {
        let idx = full_index([3, 9, 4, 7, 2]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| balanced_batch(&idx, 25, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    fn subjects(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{i:02}")).collect()
    }

    #[test]
    fn folds_partition_subjects() {
        let s = subjects(20);
        for seed in 0..100 {
            let folds = make_folds(&s, seed).unwrap();
            assert_eq!(folds.len(), 20);
            for (i, f) in folds.iter().enumerate() {
                assert_eq!(f.test_subjects, vec![s[i].clone()]);
                assert_eq!(f.validation_subjects.len(), 4);
                assert_eq!(f.training_subjects.len(), 15);
                let mut all: Vec<String> = f
                    .test_subjects
                    .iter()
                    .chain(&f.validation_subjects)
                    .chain(&f.training_subjects)
                    .cloned()
                    .collect();
                all.sort();
                assert_eq!(all, s);
            }
        }
    }

    #[test]
    fn folds_deterministic() {
        let s = subjects(20);
        assert_eq!(make_folds(&s, 9).unwrap(), make_folds(&s, 9).unwrap());
        assert_ne!(make_folds(&s, 9).unwrap(), make_folds(&s, 10).unwrap());
    }

    #[test]
    fn fold_errors() {
        let mut s = subjects(20);
        s[3] = s[4].clone();
        assert!(matches!(make_folds(&s, 0), Err(DatasetError::DuplicateSubject(_))));
        assert!(matches!(make_folds(&subjects(19), 0), Err(DatasetError::SubjectCount { .. })));
    }

    #[test]
    fn manifest_json_shape() {
        let f = &make_folds(&subjects(20), 5).unwrap()[2];
        let v = serde_json::to_value(f.manifest(5)).unwrap();
        for k in ["fold", "test", "val", "train", "seed"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }

    proptest! {
        #[test]
        fn pool_sizes_sum_to_window_count(labels in proptest::collection::vec(0usize..5, 0..200)) {
            let idx = class_pools(labels.iter().enumerate().map(|(i, l)| (WindowKey { recording: 0, epoch: i }, SleepStage::from_index(*l).unwrap())));
            prop_assert_eq!(idx.sizes().iter().sum::<usize>(), labels.len());
        }

        #[test]
        fn middle_segment_matches_source(epochs in 1usize..12, len in 1usize..20, pick in 0usize..12) {
            let r = rec(epochs, len);
            let e = pick % epochs;
            let mut out = vec![0.0; 5 * len];
            write_window(&r, e, &mut out);
            prop_assert_eq!(&out[2 * len..3 * len], r.epoch(e));
        }
    }
}
