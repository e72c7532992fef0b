//! Hypnogram annotations: EDF+ time-stamped annotation lists (TALs) and the
//! plain `epoch_index,label` CSV fallback.

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::EPOCH_SECONDS;

const TAL_DURATION: u8 = 0x15;
const TAL_TEXT: u8 = 0x14;
const TAL_END: u8 = 0x00;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    /// Seconds from the start of the recording.
    pub onset: f64,
    /// Seconds; zero when the TAL carried no duration.
    pub duration: f64,
    pub label: String,
}

impl AnnotationEvent {
    pub fn new(onset: f64, duration: f64, label: impl Into<String>) -> Self {
        AnnotationEvent { onset, duration, label: label.into() }
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

pub enum AnnotationSource<'a> {
    /// Raw bytes of an EDF+ annotation channel.
    Tal(&'a [u8]),
    /// CSV with header `epoch_index,label`.
    Csv(&'a str),
}

pub fn parse_annotations(source: AnnotationSource<'_>) -> Result<Vec<AnnotationEvent>, IngestError> {
    let mut events = match source {
        AnnotationSource::Tal(bytes) => parse_tal(bytes)?,
        AnnotationSource::Csv(text) => parse_label_csv(text)?,
    };
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    Ok(events)
}

/// Parses TAL blocks. Keepalive TALs with no label are dropped; a TAL with
/// several labels yields one event per label.
pub fn parse_tal(bytes: &[u8]) -> Result<Vec<AnnotationEvent>, IngestError> {
    let mut events = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes[pos] == TAL_END {
            pos += 1;
            continue;
        }
        let start = pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == TAL_END)
            .map(|i| start + i)
            .ok_or_else(|| IngestError::MalformedTal { offset: start, message: "missing 0x00 terminator".into() })?;
        parse_one_tal(&bytes[start..end], start, &mut events)?;
        pos = end + 1;
    }
    Ok(events)
}

fn parse_one_tal(tal: &[u8], offset: usize, out: &mut Vec<AnnotationEvent>) -> Result<(), IngestError> {
    let malformed = |message: &str| IngestError::MalformedTal { offset, message: message.into() };
    let head_end = tal.iter().position(|&b| b == TAL_TEXT).ok_or_else(|| malformed("missing 0x14 after onset"))?;
    if tal.last() != Some(&TAL_TEXT) {
        return Err(malformed("annotation text not closed by 0x14"));
    }
    let head = &tal[..head_end];
    let (onset_raw, duration_raw) = match head.iter().position(|&b| b == TAL_DURATION) {
        Some(i) => (&head[..i], Some(&head[i + 1..])),
        None => (head, None),
    };
    let text = |raw: &[u8]| String::from_utf8_lossy(raw).into_owned();
    let onset_text = text(onset_raw);
    if !(onset_text.starts_with('+') || onset_text.starts_with('-')) {
        return Err(IngestError::BadOnset { offset, text: onset_text });
    }
    let onset: f64 = onset_text.parse().map_err(|_| IngestError::BadOnset { offset, text: onset_text.clone() })?;
    let duration: f64 = match duration_raw {
        Some(raw) => {
            let t = text(raw);
            t.parse().map_err(|_| malformed(&format!("non-numeric duration {t:?}")))?
        }
        None => 0.0,
    };
    if onset < 0.0 || duration < 0.0 {
        return Err(malformed("negative onset or duration"));
    }
    let body = &tal[head_end + 1..tal.len() - 1];
    if body.is_empty() {
        return Ok(());
    }
    for label in body.split(|&b| b == TAL_TEXT) {
        if !label.is_empty() {
            out.push(AnnotationEvent::new(onset, duration, String::from_utf8_lossy(label).into_owned()));
        }
    }
    Ok(())
}

/// Parses the `epoch_index,label` CSV; each row becomes a 30-s event.
pub fn parse_label_csv(text: &str) -> Result<Vec<AnnotationEvent>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut events = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| IngestError::Csv { line: line + 1, message: e.to_string() })?;
        if row.len() != 2 {
            return Err(IngestError::Csv { line: line + 1, message: format!("expected 2 columns, found {}", row.len()) });
        }
        if line == 0 && row[0].eq_ignore_ascii_case("epoch_index") {
            continue;
        }
        let index: usize = row[0]
            .parse()
            .map_err(|_| IngestError::Csv { line: line + 1, message: format!("bad epoch index {:?}", &row[0]) })?;
        events.push(AnnotationEvent::new(index as f64 * EPOCH_SECONDS, EPOCH_SECONDS, &row[1]));
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tal() {
        let ev = parse_annotations(AnnotationSource::Tal(b"+0\x1530\x14Sleep stage W\x14\x00")).unwrap();
        assert_eq!(ev, vec![AnnotationEvent::new(0.0, 30.0, "Sleep stage W")]);
    }

    #[test]
    fn keepalive_dropped_and_padding_skipped() {
        let bytes = b"+0\x14\x14\x00+30\x15120\x14Sleep stage 2\x14\x00\x00\x00\x00";
        let ev = parse_tal(bytes).unwrap();
        assert_eq!(ev, vec![AnnotationEvent::new(30.0, 120.0, "Sleep stage 2")]);
    }

    #[test]
    fn multiple_labels_in_one_tal() {
        let ev = parse_tal(b"+5\x14a\x14b\x14\x00").unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[1].label, "b");
    }

    #[test]
    fn csv_rows() {
        let ev = parse_annotations(AnnotationSource::Csv("0,W\n1,1\n2,2")).unwrap();
        let onsets: Vec<f64> = ev.iter().map(|e| e.onset).collect();
        assert_eq!(onsets, vec![0.0, 30.0, 60.0]);
        assert!(ev.iter().all(|e| e.duration == 30.0));
        let with_header = parse_label_csv("epoch_index,label\n0,W\n").unwrap();
        assert_eq!(with_header.len(), 1);
    }

    #[test]
    fn empty_inputs() {
        assert!(parse_annotations(AnnotationSource::Tal(&[])).unwrap().is_empty());
        assert!(parse_annotations(AnnotationSource::Tal(&[0; 64])).unwrap().is_empty());
        assert!(parse_annotations(AnnotationSource::Csv("")).unwrap().is_empty());
    }

    #[test]
    fn sorted_by_onset() {
        let ev = parse_tal(b"+60\x1530\x14b\x14\x00+0\x1530\x14a\x14\x00").unwrap();
        assert_eq!(ev[0].onset, 60.0);
        let ev = parse_annotations(AnnotationSource::Tal(b"+60\x1530\x14b\x14\x00+0\x1530\x14a\x14\x00")).unwrap();
        assert_eq!(ev[0].label, "a");
    }

    #[test]
    fn malformed_blocks() {
        assert!(matches!(parse_tal(b"+0\x1530\x14W\x14"), Err(IngestError::MalformedTal { .. })));
        assert!(matches!(parse_tal(b"+0\x1530\x14W\x00"), Err(IngestError::MalformedTal { .. })));
        assert!(matches!(parse_tal(b"+abc\x14W\x14\x00"), Err(IngestError::BadOnset { .. })));
        assert!(matches!(parse_tal(b"12\x14W\x14\x00"), Err(IngestError::BadOnset { .. })));
        assert!(matches!(parse_label_csv("x,W"), Err(IngestError::Csv { .. })));
    }
}
