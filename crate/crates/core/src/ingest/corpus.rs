//! Discovery and loading of a directory of recordings.
//!
//! A recording is a `<stem>-PSG.edf` file plus its labels, either an EDF+
//! `*-Hypnogram.edf` (Sleep-EDF naming: the hypnogram stem shares all but the
//! last two characters with the PSG stem) or a `<stem>-labels.csv`.
//! An optional `lights_out.csv` (`recording,lights_out_s`) supplies lights-out
//! times for files that carry no lights-out annotation.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::annotations::{parse_annotations, AnnotationSource};
use super::edf::parse_edf;
use super::recording::{assemble_recording, AssembleOptions, AssemblyReport, Recording};
use super::IngestError;
use crate::{Error, Result, EPOCH_SECONDS};

pub const LIGHTS_OUT_FILE: &str = "lights_out.csv";

#[derive(Clone, Debug, PartialEq)]
pub enum LabelFile {
    Hypnogram(PathBuf),
    Csv(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordingFiles {
    /// PSG stem, e.g. `SC4001E0`.
    pub name: String,
    pub psg: PathBuf,
    pub labels: LabelFile,
    pub subject_id: String,
    pub night: u32,
}

/// Subject and night from a Sleep-EDF style stem (`SC4ssN..`); other names
/// are treated as a single night of a subject named after the stem.
pub fn subject_and_night(stem: &str) -> (String, u32) {
    let b = stem.as_bytes();
    if stem.len() >= 6 && (stem.starts_with("SC4") || stem.starts_with("ST7")) && b[3..6].iter().all(u8::is_ascii_digit) {
        (stem[3..5].to_string(), u32::from(b[5] - b'0'))
    } else {
        (stem.to_string(), 1)
    }
}

pub fn discover(dir: &Path) -> Result<Vec<RecordingFiles>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(n) = entry.file_name().to_str() {
            names.push(n.to_string());
        }
    }
    names.sort();
    let hypnograms: Vec<&str> = names.iter().filter_map(|n| n.strip_suffix("-Hypnogram.edf")).collect();

    let mut out = Vec::new();
    for n in &names {
        let Some(stem) = n.strip_suffix("-PSG.edf") else { continue };
        let csv = format!("{stem}-labels.csv");
        let labels = if let Some(h) = hypnograms.iter().find(|h| {
            **h == stem || (stem.len() > 2 && h.len() == stem.len() && h[..h.len() - 2] == stem[..stem.len() - 2])
        }) {
            LabelFile::Hypnogram(dir.join(format!("{h}-Hypnogram.edf")))
        } else if names.contains(&csv) {
            LabelFile::Csv(dir.join(csv))
        } else {
            log::warn!("{n}: no hypnogram or label CSV, skipped");
            continue;
        };
        let (subject_id, night) = subject_and_night(stem);
        out.push(RecordingFiles { name: stem.to_string(), psg: dir.join(n), labels, subject_id, night });
    }
    if out.is_empty() {
        return Err(IngestError::EmptyCorpus(dir.display().to_string()).into());
    }
    Ok(out)
}

/// Lights-out times in seconds keyed by PSG stem.
pub fn read_lights_out(dir: &Path) -> Result<HashMap<String, f64>> {
    let path = dir.join(LIGHTS_OUT_FILE);
    if !path.exists() {
        return Ok(HashMap::new());
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&path).map_err(|e| Error::csv(&path, e))?;
    let mut out = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::csv(&path, e))?;
        let secs: f64 = row
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Usage(format!("{}: bad lights-out row {row:?}", path.display())))?;
        out.insert(row[0].to_string(), secs);
    }
    Ok(out)
}

pub fn load_recording(
    files: &RecordingFiles,
    channel: &str,
    lights_out_seconds: Option<f64>,
) -> Result<(Recording, AssemblyReport)> {
    let bytes = fs::read(&files.psg).map_err(|e| Error::io(&files.psg, e))?;
    let psg = parse_edf(&bytes)?;
    drop(bytes);
    let events = match &files.labels {
        LabelFile::Hypnogram(p) => {
            let raw = fs::read(p).map_err(|e| Error::io(p, e))?;
            let hyp = parse_edf(&raw)?;
            parse_annotations(AnnotationSource::Tal(&hyp.annotation_bytes()))?
        }
        LabelFile::Csv(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_annotations(AnnotationSource::Csv(&text))?
        }
    };
    let channel_index = psg.signal_index(channel).ok_or_else(|| IngestError::ChannelNotFound {
        channel: channel.to_string(),
        available: psg.signals.iter().map(|s| s.label.clone()).collect(),
    })?;
    // Only the scoring channel is converted; other slots stay empty.
    let mut signals = vec![Vec::new(); psg.signals.len()];
    signals[channel_index] = psg.physical_samples(channel_index);
    let options = AssembleOptions {
        channel: channel.to_string(),
        subject_id: files.subject_id.clone(),
        night: files.night,
        lights_out_epoch: lights_out_seconds.map(|s| (s / EPOCH_SECONDS).floor() as usize),
    };
    Ok(assemble_recording(&signals, &psg.signals, &events, &options)?)
}

/// Loads every recording under `dir`, in file-name order.
pub fn load_corpus(dir: &Path, channel: &str) -> Result<Vec<(RecordingFiles, Recording, AssemblyReport)>> {
    let files = discover(dir)?;
    let lights = read_lights_out(dir)?;
    files
        .into_iter()
        .map(|f| {
            let (rec, report) = load_recording(&f, channel, lights.get(&f.name).copied()).inspect_err(|e| {
                log::error!("{}: {e}", f.psg.display());
            })?;
            Ok((f, rec, report))
        })
        .collect()
}
