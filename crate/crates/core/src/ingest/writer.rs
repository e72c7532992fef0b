//! Minimal EDF/EDF+ writer for building fixtures and synthetic corpora.
//!
//! Only what the parser round-trips is supported: fixed header fields,
//! regular signals given as digital counts, and an optional EDF+ annotation
//! channel filled with TAL text.

use std::fmt::Write as _;

use super::annotations::AnnotationEvent;
use super::IngestError;

#[derive(Clone, Debug)]
pub struct EdfSignal {
    pub label: String,
    pub samples_per_record: usize,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub digital: Vec<i16>,
}

impl EdfSignal {
    pub fn new(
        label: &str,
        samples_per_record: usize,
        physical_min: f64,
        physical_max: f64,
        digital_min: i32,
        digital_max: i32,
        digital: Vec<i16>,
    ) -> Self {
        EdfSignal {
            label: label.to_string(),
            samples_per_record,
            physical_min,
            physical_max,
            digital_min,
            digital_max,
            digital,
        }
    }

    /// Quantizes physical samples onto the full 16-bit range spanning `±range`.
    pub fn from_physical(label: &str, samples_per_record: usize, range: f64, physical: &[f64]) -> Self {
        let (dmin, dmax) = (-32768, 32767);
        let gain = 2.0 * range / f64::from(dmax - dmin);
        let digital = physical
            .iter()
            .map(|&p| (((p + range) / gain).round() + f64::from(dmin)).clamp(f64::from(dmin), f64::from(dmax)) as i16)
            .collect();
        EdfSignal::new(label, samples_per_record, -range, range, dmin, dmax, digital)
    }
}

#[derive(Clone, Debug)]
pub struct EdfWriter {
    record_duration: f64,
    signals: Vec<EdfSignal>,
    annotations: Option<(usize, Vec<AnnotationEvent>)>,
    patient: String,
    recording: String,
}

impl EdfWriter {
    pub fn new(record_duration: f64) -> Self {
        EdfWriter {
            record_duration,
            signals: Vec::new(),
            annotations: None,
            patient: "X X X X".into(),
            recording: "Startdate X X X X".into(),
        }
    }

    pub fn add_signal(&mut self, signal: EdfSignal) -> &mut Self {
        self.signals.push(signal);
        self
    }

    /// Adds an EDF+ annotation channel with `bytes_per_record` bytes per record.
    /// Events are spread over records in order; every record opens with its
    /// time-keeping TAL.
    pub fn annotations(&mut self, bytes_per_record: usize, events: Vec<AnnotationEvent>) -> &mut Self {
        self.annotations = Some((bytes_per_record + bytes_per_record % 2, events));
        self
    }

    fn records(&self) -> Result<usize, IngestError> {
        let mut n: Option<usize> = None;
        for s in &self.signals {
            if s.samples_per_record == 0 || s.digital.len() % s.samples_per_record != 0 {
                return Err(IngestError::Writer(format!("signal {:?} is not a whole number of records", s.label)));
            }
            let r = s.digital.len() / s.samples_per_record;
            if n.is_some_and(|n| n != r) {
                return Err(IngestError::Writer("signals disagree on record count".into()));
            }
            n = Some(r);
        }
        Ok(n.unwrap_or(1))
    }

    fn annotation_records(&self, records: usize) -> Result<Vec<Vec<u8>>, IngestError> {
        let Some((width, events)) = &self.annotations else { return Ok(Vec::new()) };
        let mut blocks: Vec<Vec<u8>> = (0..records)
            .map(|r| format!("+{}\x14\x14\x00", fmt_num(r as f64 * self.record_duration)).into_bytes())
            .collect();
        let mut r = 0;
        for e in events {
            let mut tal = format!("+{}", fmt_num(e.onset));
            if e.duration > 0.0 {
                write!(tal, "\x15{}", fmt_num(e.duration)).unwrap();
            }
            write!(tal, "\x14{}\x14\x00", e.label).unwrap();
            while r < records && blocks[r].len() + tal.len() > *width {
                r += 1;
            }
            if r == records {
                return Err(IngestError::Writer("annotation channel too narrow for the events".into()));
            }
            blocks[r].extend_from_slice(tal.as_bytes());
        }
        for b in &mut blocks {
            b.resize(*width, 0);
        }
        Ok(blocks)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, IngestError> {
        let records = self.records()?;
        let ann = self.annotation_records(records)?;
        let ns = self.signals.len() + usize::from(self.annotations.is_some());

        let mut h = String::new();
        push(&mut h, "0", 8);
        push(&mut h, &self.patient, 80);
        push(&mut h, &self.recording, 80);
        push(&mut h, "01.01.00", 8);
        push(&mut h, "00.00.00", 8);
        push(&mut h, &(256 + 256 * ns).to_string(), 8);
        push(&mut h, if self.annotations.is_some() { "EDF+C" } else { "" }, 44);
        push(&mut h, &records.to_string(), 8);
        push(&mut h, &fmt_num(self.record_duration), 8);
        push(&mut h, &ns.to_string(), 4);

        let ann_spec = self.annotations.as_ref().map(|(w, _)| EdfSignal::new(super::edf::ANNOTATION_LABEL, w / 2, -1.0, 1.0, -32768, 32767, Vec::new()));
        let all: Vec<&EdfSignal> = self.signals.iter().chain(ann_spec.iter()).collect();
        for s in &all {
            push(&mut h, &s.label, 16);
        }
        for _ in &all {
            push(&mut h, "", 80);
        }
        for s in &all {
            push(&mut h, if s.label == super::edf::ANNOTATION_LABEL { "" } else { "uV" }, 8);
        }
        for s in &all {
            push(&mut h, &fmt_num(s.physical_min), 8);
        }
        for s in &all {
            push(&mut h, &fmt_num(s.physical_max), 8);
        }
        for s in &all {
            push(&mut h, &s.digital_min.to_string(), 8);
        }
        for s in &all {
            push(&mut h, &s.digital_max.to_string(), 8);
        }
        for _ in &all {
            push(&mut h, "", 80);
        }
        for s in &all {
            push(&mut h, &s.samples_per_record.to_string(), 8);
        }
        for _ in &all {
            push(&mut h, "", 32);
        }

        let mut out = h.into_bytes();
        for r in 0..records {
            for s in &self.signals {
                let spr = s.samples_per_record;
                for d in &s.digital[r * spr..(r + 1) * spr] {
                    out.extend_from_slice(&d.to_le_bytes());
                }
            }
            if let Some(block) = ann.get(r) {
                out.extend_from_slice(block);
            }
        }
        Ok(out)
    }
}

fn push(h: &mut String, value: &str, width: usize) {
    let v: String = value.chars().take(width).collect();
    write!(h, "{v:<width$}").unwrap();
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{}", x as i64)
    } else {
        let s = format!("{x}");
        s.chars().take(8).collect()
    }
}
