//! Recording ingestion: EDF/EDF+ files and hypnograms into [`Recording`]s.

pub mod annotations;
pub mod corpus;
pub mod edf;
pub mod labels;
pub mod recording;
pub mod writer;

use thiserror::Error;

pub use annotations::{parse_annotations, AnnotationEvent, AnnotationSource};
pub use corpus::{discover, load_corpus, load_recording, LabelFile, RecordingFiles};
pub use edf::{parse_edf, EdfFile, EdfHeader, SignalSpec};
pub use labels::map_label;
pub use recording::{assemble_recording, AssembleOptions, AssemblyReport, Recording, DEFAULT_CHANNEL};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("truncated input at byte {offset}: need {needed} bytes, have {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("non-ASCII byte in header field {field} at byte {offset}")]
    NonAscii { offset: usize, field: &'static str },
    #[error("header field {field} at byte {offset} is not a number: {text:?}")]
    BadNumber { offset: usize, field: &'static str, text: String },
    #[error("signal {signal:?} has an empty digital range (header byte {offset})")]
    ZeroDigitalRange { offset: usize, signal: String },
    #[error("inconsistent header at byte {offset}: {message}")]
    Inconsistent { offset: usize, message: String },
    #[error("malformed TAL at byte {offset}: {message}")]
    MalformedTal { offset: usize, message: String },
    #[error("non-numeric TAL onset at byte {offset}: {text:?}")]
    BadOnset { offset: usize, text: String },
    #[error("label CSV line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("unknown hypnogram label {0:?}")]
    UnknownLabel(String),
    #[error("channel {channel:?} not found; available: {available:?}")]
    ChannelNotFound { channel: String, available: Vec<String> },
    #[error("channel {channel:?} is sampled at {rate} Hz; 100 Hz is required")]
    SamplingRate { channel: String, rate: f64 },
    #[error("no lights-out marker in the annotations and no override supplied")]
    NoLightsOut,
    #[error("lights-out epoch {epoch} is past the end of the recording ({epochs} epochs)")]
    LightsOutOutOfRange { epoch: usize, epochs: usize },
    #[error("no sleep onset: no non-W epoch after lights-out")]
    NoSleepOnset,
    #[error("no scored epochs remain")]
    NoScoredEpochs,
    #[error("no recordings found in {0}")]
    EmptyCorpus(String),
    #[error("EDF writer: {0}")]
    Writer(String),
}
