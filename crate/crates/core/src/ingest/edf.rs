//! EDF / EDF+ container parsing.
//!
//! Layout: a 256-byte fixed header, 256 bytes of per-signal header fields
//! (stored field-major), then `records` data records. Each record holds, per
//! signal, `samples_per_record` little-endian two's-complement 16-bit samples.

use serde::Serialize;

use super::IngestError;

const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;

/// Label EDF+ uses for its annotation channel.
pub const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdfHeader {
    pub version: String,
    pub patient: String,
    pub recording: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes: usize,
    /// `"EDF+C"`, `"EDF+D"` or empty for plain EDF.
    pub reserved: String,
    pub records: usize,
    pub record_duration: f64,
    pub signal_count: usize,
}

impl EdfHeader {
    pub fn is_edf_plus(&self) -> bool {
        self.reserved.starts_with("EDF+")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignalSpec {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    /// Samples per second, derived from the record duration.
    pub sampling_rate: f64,
}

impl SignalSpec {
    pub fn is_annotation(&self) -> bool {
        self.label == ANNOTATION_LABEL
    }

    /// Physical units per digital count.
    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / f64::from(self.digital_max - self.digital_min)
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        (f64::from(digital) - f64::from(self.digital_min)) * self.gain() + self.physical_min
    }

    /// Nearest digital count for a physical value, clamped to the digital range.
    pub fn to_digital(&self, physical: f64) -> i16 {
        let d = ((physical - self.physical_min) / self.gain()).round() + f64::from(self.digital_min);
        d.clamp(f64::from(self.digital_min), f64::from(self.digital_max)) as i16
    }
}

/// A parsed EDF file. Samples are kept as digital counts; physical values are
/// produced on demand.
#[derive(Clone, Debug)]
pub struct EdfFile {
    pub header: EdfHeader,
    pub signals: Vec<SignalSpec>,
    digital: Vec<Vec<i16>>,
}

impl EdfFile {
    pub fn signal_index(&self, label: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.label == label)
    }

    pub fn digital_samples(&self, signal: usize) -> &[i16] {
        &self.digital[signal]
    }

    pub fn physical_samples(&self, signal: usize) -> Vec<f64> {
        let spec = &self.signals[signal];
        self.digital[signal].iter().map(|&d| spec.to_physical(d)).collect()
    }

    /// Raw bytes of a signal's slots, in record order. Used for the EDF+
    /// annotation channel, whose "samples" are TAL text.
    pub fn signal_bytes(&self, signal: usize) -> Vec<u8> {
        self.digital[signal].iter().flat_map(|d| d.to_le_bytes()).collect()
    }

    /// Bytes of every annotation channel concatenated.
    pub fn annotation_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (i, s) in self.signals.iter().enumerate() {
            if s.is_annotation() {
                out.extend(self.signal_bytes(i));
            }
        }
        out
    }

    /// Physical samples of every signal, in header order.
    pub fn all_physical(&self) -> Vec<Vec<f64>> {
        (0..self.signals.len()).map(|i| self.physical_samples(i)).collect()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn field(&mut self, len: usize, name: &'static str) -> Result<String, IngestError> {
        let offset = self.pos;
        let raw = self
            .bytes
            .get(offset..offset + len)
            .ok_or(IngestError::Truncated { offset, needed: offset + len, len: self.bytes.len() })?;
        if let Some(bad) = raw.iter().position(|b| !(0x20..=0x7e).contains(b)) {
            return Err(IngestError::NonAscii { offset: offset + bad, field: name });
        }
        self.pos += len;
        // Checked printable ASCII above.
        Ok(String::from_utf8_lossy(raw).trim_end().to_string())
    }

    fn number<T: std::str::FromStr>(&mut self, len: usize, name: &'static str) -> Result<T, IngestError> {
        let offset = self.pos;
        let text = self.field(len, name)?;
        text.trim().parse().map_err(|_| IngestError::BadNumber { offset, field: name, text })
    }
}

/// Parses a complete EDF or EDF+ file.
pub fn parse_edf(bytes: &[u8]) -> Result<EdfFile, IngestError> {
    let mut c = Cursor { bytes, pos: 0 };
    let version = c.field(8, "version")?;
    let patient = c.field(80, "patient")?;
    let recording = c.field(80, "recording")?;
    let start_date = c.field(8, "start date")?;
    let start_time = c.field(8, "start time")?;
    let header_bytes: usize = c.number(8, "header bytes")?;
    let reserved = c.field(44, "reserved")?;
    let records_offset = c.pos;
    let declared_records: i64 = c.number(8, "record count")?;
    let duration_offset = c.pos;
    let record_duration: f64 = c.number(8, "record duration")?;
    let signal_count: usize = c.number(4, "signal count")?;

    let expected_header = FIXED_HEADER + SIGNAL_HEADER * signal_count;
    if header_bytes != expected_header {
        return Err(IngestError::Inconsistent {
            offset: 184,
            message: format!("header size {header_bytes} but {signal_count} signals need {expected_header}"),
        });
    }
    if record_duration <= 0.0 {
        return Err(IngestError::Inconsistent {
            offset: duration_offset,
            message: format!("record duration {record_duration} must be positive"),
        });
    }

    let ns = signal_count;
    let mut column = |len: usize, name: &'static str| -> Result<Vec<String>, IngestError> {
        (0..ns).map(|_| c.field(len, name)).collect()
    };
    let labels = column(16, "label")?;
    let transducers = column(80, "transducer")?;
    let dimensions = column(8, "physical dimension")?;
    let phys_min_t = column(8, "physical minimum")?;
    let phys_max_t = column(8, "physical maximum")?;
    let dig_min_t = column(8, "digital minimum")?;
    let dig_max_t = column(8, "digital maximum")?;
    let prefilter = column(80, "prefiltering")?;
    let spr_t = column(8, "samples per record")?;
    let _reserved = column(32, "signal reserved")?;

    // Field offsets are recomputed for error reporting.
    let field_offset = |block_start: usize, width: usize, i: usize| FIXED_HEADER + ns * block_start + width * i;
    let num = |text: &str, block_start: usize, width: usize, i: usize, field: &'static str| -> Result<f64, IngestError> {
        text.trim().parse::<f64>().map_err(|_| IngestError::BadNumber {
            offset: field_offset(block_start, width, i),
            field,
            text: text.to_string(),
        })
    };

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let physical_min = num(&phys_min_t[i], 104, 8, i, "physical minimum")?;
        let physical_max = num(&phys_max_t[i], 112, 8, i, "physical maximum")?;
        let digital_min = num(&dig_min_t[i], 120, 8, i, "digital minimum")? as i32;
        let digital_max = num(&dig_max_t[i], 128, 8, i, "digital maximum")? as i32;
        let samples_per_record = num(&spr_t[i], 216, 8, i, "samples per record")? as usize;
        if digital_max <= digital_min {
            return Err(IngestError::ZeroDigitalRange { offset: field_offset(120, 8, i), signal: labels[i].clone() });
        }
        if physical_max == physical_min {
            return Err(IngestError::Inconsistent {
                offset: field_offset(104, 8, i),
                message: format!("signal {:?} has zero physical range", labels[i]),
            });
        }
        signals.push(SignalSpec {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dimension: dimensions[i].clone(),
            physical_min,
            physical_max,
            digital_min,
            digital_max,
            prefiltering: prefilter[i].clone(),
            samples_per_record,
            sampling_rate: samples_per_record as f64 / record_duration,
        });
    }

    let record_bytes: usize = signals.iter().map(|s| s.samples_per_record * 2).sum();
    let payload = bytes.len() - expected_header;
    let records = if declared_records < 0 {
        // -1 marks an unfinished recording; count whole records instead.
        payload.checked_div(record_bytes).unwrap_or(0)
    } else {
        let declared = declared_records as usize;
        if declared * record_bytes > payload {
            return Err(IngestError::Truncated {
                offset: bytes.len(),
                needed: expected_header + declared * record_bytes,
                len: bytes.len(),
            });
        }
        if declared * record_bytes != payload {
            return Err(IngestError::Inconsistent {
                offset: records_offset,
                message: format!(
                    "header declares {declared} records ({} bytes) but {payload} data bytes follow",
                    declared * record_bytes
                ),
            });
        }
        declared
    };

    let mut digital: Vec<Vec<i16>> =
        signals.iter().map(|s| Vec::with_capacity(s.samples_per_record * records)).collect();
    let mut pos = expected_header;
    for _ in 0..records {
        for (s, out) in signals.iter().zip(digital.iter_mut()) {
            let chunk = &bytes[pos..pos + 2 * s.samples_per_record];
            out.extend(chunk.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])));
            pos += chunk.len();
        }
    }

    Ok(EdfFile {
        header: EdfHeader {
            version,
            patient,
            recording,
            start_date,
            start_time,
            header_bytes,
            reserved,
            records,
            record_duration,
            signal_count,
        },
        signals,
        digital,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::writer::{EdfSignal, EdfWriter};

    fn spec() -> SignalSpec {
        SignalSpec {
            label: "EEG Fpz-Cz".into(),
            transducer: String::new(),
            physical_dimension: "uV".into(),
            physical_min: -200.0,
            physical_max: 200.0,
            digital_min: -2048,
            digital_max: 2047,
            prefiltering: String::new(),
            samples_per_record: 3000,
            sampling_rate: 100.0,
        }
    }

    #[test]
    fn scaling_endpoints() {
        let s = spec();
        assert_eq!(s.to_physical(2047), 200.0);
        assert_eq!(s.to_physical(-2048), -200.0);
    }

    fn two_signal_file() -> Vec<u8> {
        let mut w = EdfWriter::new(30.0);
        w.add_signal(EdfSignal::new("EEG Fpz-Cz", 3000, -200.0, 200.0, -2048, 2047, (0..6000).map(|i| (i % 4000 - 2000) as i16).collect()));
        w.add_signal(EdfSignal::new("EEG Pz-Oz", 3000, -100.0, 100.0, -32768, 32767, (0..6000).map(|i| (i * 7 % 65536 - 32768) as i16).collect()));
        w.to_bytes().unwrap()
    }

    #[test]
    fn reports_truncation_offset() {
        let bytes = two_signal_file();
        let err = parse_edf(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, IngestError::Truncated { .. }), "{err}");
        let err = parse_edf(&bytes[..100]).unwrap_err();
        assert!(matches!(err, IngestError::Truncated { offset: 88, .. }), "{err}");
    }

    #[test]
    fn rejects_non_ascii_header() {
        let mut bytes = two_signal_file();
        bytes[10] = 0xC3;
        assert!(matches!(parse_edf(&bytes), Err(IngestError::NonAscii { offset: 10, .. })));
    }

    #[test]
    fn rejects_zero_digital_range() {
        let mut bytes = two_signal_file();
        // digital max of signal 0 sits at 256 + 2*128.
        let off = 256 + 2 * 128;
        bytes[off..off + 8].copy_from_slice(b"-2048   ");
        assert!(matches!(parse_edf(&bytes), Err(IngestError::ZeroDigitalRange { .. })));
    }

    #[test]
    fn rejects_record_count_mismatch() {
        let mut bytes = two_signal_file();
        bytes.extend_from_slice(&[0u8; 12000]);
        bytes.extend_from_slice(&[0u8; 2]);
        assert!(matches!(parse_edf(&bytes), Err(IngestError::Inconsistent { offset: 236, .. })));
    }

    #[test]
    fn unknown_record_count_is_derived() {
        let mut bytes = two_signal_file();
        bytes[236..244].copy_from_slice(b"-1      ");
        let f = parse_edf(&bytes).unwrap();
        assert_eq!(f.header.records, 2);
    }
}
