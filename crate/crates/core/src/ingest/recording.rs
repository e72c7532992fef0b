use serde::Serialize;

use super::annotations::AnnotationEvent;
use super::edf::SignalSpec;
use super::labels::{classify_label, is_lights_out_marker, LabelKind};
use super::IngestError;
use crate::{SleepStage, EPOCH_SAMPLES, EPOCH_SECONDS, SAMPLING_RATE_HZ};

/// Default scoring channel.
pub const DEFAULT_CHANNEL: &str = "EEG Fpz-Cz";

/// One subject-night of the scoring channel, cut into epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub night: u32,
    /// Samples in µV. Length is `epoch_len * epoch_labels.len()`.
    pub samples: Vec<f32>,
    /// `None` marks an unscorable epoch; assembled recordings contain none.
    pub epoch_labels: Vec<Option<SleepStage>>,
    /// Index of each retained epoch in the original recording.
    pub source_epochs: Vec<usize>,
    /// Lights-out epoch, as an index into the original recording.
    pub lights_out_epoch: usize,
    pub epoch_len: usize,
}

impl Recording {
    /// Builds a recording from already-epoched data. Epoch `i` of the result
    /// is epoch `i` of the source.
    pub fn from_epochs(
        subject_id: impl Into<String>,
        night: u32,
        samples: Vec<f32>,
        epoch_labels: Vec<Option<SleepStage>>,
        epoch_len: usize,
    ) -> Result<Self, IngestError> {
        if epoch_len == 0 || samples.len() != epoch_len * epoch_labels.len() {
            return Err(IngestError::Inconsistent {
                offset: 0,
                message: format!(
                    "{} samples do not form {} epochs of {epoch_len}",
                    samples.len(),
                    epoch_labels.len()
                ),
            });
        }
        let n = epoch_labels.len();
        Ok(Recording {
            subject_id: subject_id.into(),
            night,
            samples,
            epoch_labels,
            source_epochs: (0..n).collect(),
            lights_out_epoch: 0,
            epoch_len,
        })
    }

    pub fn epoch_count(&self) -> usize {
        self.epoch_labels.len()
    }

    pub fn epoch(&self, index: usize) -> &[f32] {
        &self.samples[index * self.epoch_len..(index + 1) * self.epoch_len]
    }

    /// `"<subject>/<night>"`.
    pub fn key(&self) -> String {
        format!("{}/{}", self.subject_id, self.night)
    }

    /// Labels of the scored epochs, in order.
    pub fn stages(&self) -> Vec<SleepStage> {
        self.epoch_labels.iter().flatten().copied().collect()
    }

    pub fn stage_histogram(&self) -> [usize; SleepStage::COUNT] {
        let mut h = [0; SleepStage::COUNT];
        for s in self.epoch_labels.iter().flatten() {
            h[s.index()] += 1;
        }
        h
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.samples.len() != self.epoch_len * self.epoch_labels.len() {
            return Err("sample count is not a whole number of epochs".into());
        }
        if self.source_epochs.len() != self.epoch_labels.len() {
            return Err("source epoch map has the wrong length".into());
        }
        if self.source_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err("source epochs not strictly increasing".into());
        }
        Ok(())
    }
}

/// How a recording was cut from its source file.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AssemblyReport {
    pub total_epochs: usize,
    pub in_bed_epochs: usize,
    pub removed_movement: usize,
    pub removed_unscored: usize,
    pub retained_epochs: usize,
}

impl AssemblyReport {
    pub fn removed(&self) -> usize {
        self.removed_movement + self.removed_unscored
    }
}

#[derive(Clone, Debug)]
pub struct AssembleOptions {
    pub channel: String,
    pub subject_id: String,
    pub night: u32,
    /// Lights-out epoch; wins over any lights-out annotation.
    pub lights_out_epoch: Option<usize>,
}

impl AssembleOptions {
    pub fn new(subject_id: impl Into<String>, night: u32) -> Self {
        AssembleOptions {
            channel: DEFAULT_CHANNEL.to_string(),
            subject_id: subject_id.into(),
            night,
            lights_out_epoch: None,
        }
    }
}

/// Assigns a label to every epoch of the channel and keeps the in-bed part:
/// from lights-out through the last non-W epoch, with unscorable epochs
/// removed.
pub fn assemble_recording(
    signals: &[Vec<f64>],
    specs: &[SignalSpec],
    annotations: &[AnnotationEvent],
    options: &AssembleOptions,
) -> Result<(Recording, AssemblyReport), IngestError> {
    let channel = specs.iter().position(|s| s.label == options.channel).ok_or_else(|| IngestError::ChannelNotFound {
        channel: options.channel.clone(),
        available: specs.iter().map(|s| s.label.clone()).collect(),
    })?;
    let spec = &specs[channel];
    if (spec.sampling_rate - SAMPLING_RATE_HZ).abs() > 1e-9 {
        return Err(IngestError::SamplingRate { channel: spec.label.clone(), rate: spec.sampling_rate });
    }
    let signal = &signals[channel];
    let total_epochs = signal.len() / EPOCH_SAMPLES;

    let mut lights_out = None;
    let mut stage_events = Vec::new();
    for e in annotations {
        if is_lights_out_marker(&e.label) {
            lights_out.get_or_insert((e.onset / EPOCH_SECONDS).floor() as usize);
        } else {
            stage_events.push((e, classify_label(&e.label)?));
        }
    }
    let lights_out = options.lights_out_epoch.or(lights_out).ok_or(IngestError::NoLightsOut)?;

    let kinds = epoch_kinds(&stage_events, total_epochs);
    if lights_out >= total_epochs {
        return Err(IngestError::LightsOutOutOfRange { epoch: lights_out, epochs: total_epochs });
    }
    let last_sleep = (lights_out..total_epochs)
        .rev()
        .find(|&i| matches!(kinds[i], Some(LabelKind::Stage(s)) if s.is_sleep()))
        .ok_or(IngestError::NoSleepOnset)?;

    let mut report = AssemblyReport { total_epochs, in_bed_epochs: last_sleep - lights_out + 1, ..Default::default() };
    let mut samples = Vec::with_capacity(report.in_bed_epochs * EPOCH_SAMPLES);
    let mut labels = Vec::new();
    let mut source = Vec::new();
    for (i, kind) in kinds.iter().enumerate().take(last_sleep + 1).skip(lights_out) {
        match kind {
            Some(LabelKind::Stage(s)) => {
                labels.push(Some(*s));
                source.push(i);
                samples.extend(signal[i * EPOCH_SAMPLES..(i + 1) * EPOCH_SAMPLES].iter().map(|&v| v as f32));
            }
            Some(LabelKind::Movement) => report.removed_movement += 1,
            Some(LabelKind::NotScored) | None => report.removed_unscored += 1,
        }
    }
    report.retained_epochs = labels.len();
    if labels.is_empty() {
        return Err(IngestError::NoScoredEpochs);
    }
    Ok((
        Recording {
            subject_id: options.subject_id.clone(),
            night: options.night,
            samples,
            epoch_labels: labels,
            source_epochs: source,
            lights_out_epoch: lights_out,
            epoch_len: EPOCH_SAMPLES,
        },
        report,
    ))
}

/// Label kind of each epoch: the event covering the epoch's start wins.
fn epoch_kinds(events: &[(&AnnotationEvent, LabelKind)], epochs: usize) -> Vec<Option<LabelKind>> {
    let mut kinds = vec![None; epochs];
    for (e, kind) in events {
        if e.duration <= 0.0 {
            continue;
        }
        let first = (e.onset / EPOCH_SECONDS).ceil() as usize;
        let mut i = first;
        while i < epochs && (i as f64) * EPOCH_SECONDS < e.end() {
            kinds[i] = Some(*kind);
            i += 1;
        }
    }
    kinds
}
