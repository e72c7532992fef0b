//! Synthetic data: band-coded recordings for training smoke tests, EDF
//! corpora for ingestion, and a reference confusion matrix.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::writer::{EdfSignal, EdfWriter};
use crate::ingest::{AnnotationEvent, Recording, DEFAULT_CHANNEL};
use crate::{Error, Result, SleepStage, EPOCH_SAMPLES, EPOCH_SECONDS, SAMPLING_RATE_HZ};

/// Cross-validated confusion counts of the reference study, `[expert][predicted]`
/// in N1, N2, N3, R, W order.
pub const REFERENCE_CONFUSION: [[u64; 5]; 5] = [
    [1657, 259, 9, 427, 410],
    [1534, 12858, 1263, 1257, 666],
    [9, 399, 5097, 1, 85],
    [1019, 643, 3, 5686, 360],
    [605, 171, 47, 175, 2382],
];

/// Tone frequency coding each stage in band-coded data, indexed by stage.
pub const BAND_HZ: [f64; 5] = [2.0, 6.0, 11.0, 18.0, 30.0];

/// Piecewise-constant stage sequence with runs of 3 to 12 epochs.
pub fn stage_sequence<R: Rng + ?Sized>(epochs: usize, rng: &mut R) -> Vec<SleepStage> {
    let mut out = Vec::with_capacity(epochs);
    let mut current = SleepStage::ALL[rng.random_range(0..5)];
    while out.len() < epochs {
        let run = rng.random_range(3..=12).min(epochs - out.len());
        out.extend(std::iter::repeat_n(current, run));
        let next = rng.random_range(0..4);
        current = SleepStage::ALL[(current.index() + 1 + next) % 5];
    }
    out
}

/// One epoch: a tone at the stage's band frequency with random phase and
/// amplitude, plus white noise.
pub fn band_epoch<R: Rng + ?Sized>(stage: SleepStage, len: usize, noise_std: f64, rng: &mut R) -> Vec<f32> {
    let f = BAND_HZ[stage.index()];
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let amp = rng.random_range(15.0..25.0);
    let noise = Normal::new(0.0, noise_std).expect("non-negative std");
    (0..len)
        .map(|i| {
            let t = i as f64 / SAMPLING_RATE_HZ;
            (amp * (std::f64::consts::TAU * f * t + phase).sin() + noise.sample(rng)) as f32
        })
        .collect()
}

pub fn band_recording(subject: &str, night: u32, stages: &[SleepStage], epoch_len: usize, noise_std: f64, seed: u64) -> Recording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = stages.iter().flat_map(|&s| band_epoch(s, epoch_len, noise_std, &mut rng)).collect();
    Recording::from_epochs(subject, night, samples, stages.iter().map(|&s| Some(s)).collect(), epoch_len)
        .expect("consistent by construction")
}

/// `subjects` subjects (`s00`, `s01`, …) with one band-coded night each.
pub fn band_corpus(subjects: usize, epochs: usize, epoch_len: usize, noise_std: f64, seed: u64) -> Vec<Recording> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..subjects)
        .map(|i| {
            let stages = stage_sequence(epochs, &mut rng);
            band_recording(&format!("s{i:02}"), 1, &stages, epoch_len, noise_std, rng.random())
        })
        .collect()
}

/// A night to be written as a PSG/hypnogram EDF pair.
#[derive(Clone, Debug)]
pub struct SyntheticNight {
    /// Hypnogram label of each 30-s epoch, e.g. `"Sleep stage 2"`.
    pub labels: Vec<String>,
    /// Written as a "Lights off" annotation when set.
    pub lights_out_s: Option<f64>,
    pub seed: u64,
}

impl SyntheticNight {
    pub fn from_stages(stages: &[SleepStage], seed: u64) -> Self {
        let labels = stages
            .iter()
            .map(|s| match s {
                SleepStage::R => "Sleep stage R".to_string(),
                other => format!("Sleep stage {}", other.name().trim_start_matches('N')),
            })
            .collect();
        SyntheticNight { labels, lights_out_s: Some(0.0), seed }
    }
}

/// Writes `<stem>-PSG.edf` (EEG Fpz-Cz plus a second EEG channel, 100 Hz) and
/// `<stem>-Hypnogram.edf` (EDF+ annotations) into `dir`. Epochs labeled with
/// a sleep stage carry that stage's band tone; others carry noise.
pub fn write_edf_pair(dir: &Path, stem: &str, night: &SyntheticNight) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(night.seed);
    let mut fpz = Vec::with_capacity(night.labels.len() * EPOCH_SAMPLES);
    for label in &night.labels {
        let stage = crate::ingest::map_label(label).ok().flatten();
        let epoch = match stage {
            Some(s) => band_epoch(s, EPOCH_SAMPLES, 3.0, &mut rng),
            None => band_epoch(SleepStage::W, EPOCH_SAMPLES, 30.0, &mut rng).iter().map(|v| v * 0.1).collect(),
        };
        fpz.extend(epoch.into_iter().map(f64::from));
    }
    let pz: Vec<f64> = fpz.iter().map(|v| -0.5 * v).collect();
    let spr = EPOCH_SAMPLES;
    let mut psg = EdfWriter::new(EPOCH_SECONDS);
    psg.add_signal(EdfSignal::from_physical(DEFAULT_CHANNEL, spr, 200.0, &fpz));
    psg.add_signal(EdfSignal::from_physical("EEG Pz-Oz", spr, 200.0, &pz));

    let mut events: Vec<AnnotationEvent> = Vec::new();
    if let Some(t) = night.lights_out_s {
        events.push(AnnotationEvent::new(t, 0.0, "Lights off"));
    }
    // Consecutive identical labels merge into one event, as in real hypnograms.
    let mut i = 0;
    while i < night.labels.len() {
        let j = (i..night.labels.len()).find(|&j| night.labels[j] != night.labels[i]).unwrap_or(night.labels.len());
        events.push(AnnotationEvent::new(i as f64 * EPOCH_SECONDS, (j - i) as f64 * EPOCH_SECONDS, night.labels[i].clone()));
        i = j;
    }
    let width = 64 + events.iter().map(|e| e.label.len() + 32).sum::<usize>();
    let mut hyp = EdfWriter::new(night.labels.len().max(1) as f64 * EPOCH_SECONDS);
    hyp.annotations(width, events);

    let psg_path = dir.join(format!("{stem}-PSG.edf"));
    std::fs::write(&psg_path, psg.to_bytes()?).map_err(|e| Error::io(&psg_path, e))?;
    // Sleep-EDF pairs differ in the last two characters of the stem.
    let hyp_stem = if stem.len() > 2 { format!("{}EH", &stem[..stem.len() - 2]) } else { stem.to_string() };
    let hyp_path = dir.join(format!("{hyp_stem}-Hypnogram.edf"));
    std::fs::write(&hyp_path, hyp.to_bytes()?).map_err(|e| Error::io(&hyp_path, e))?;
    Ok(())
}
