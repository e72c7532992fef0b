//! Sleep-stage scoring from a single EEG channel.
//!
//! The crate covers the whole pipeline:
//!
//! - [`ingest`]: EDF/EDF+ parsing, hypnogram annotations and in-bed trimming
//!   into [`ingest::Recording`] values.
//! - [`dataset`]: five-epoch context windows, class pools, class-balanced
//!   batches and subject-wise fold splits.
//! - [`tensor`]: the dense forward/backward kernels the network is built from,
//!   plus a central finite-difference checker.
//! - [`model`]: the two-stage convolutional network, SGD with momentum, the
//!   fixed Morlet first-layer variant and checkpoints.
//! - [`training`]: per-fold training with early stopping and leave-one-subject-out
//!   cross-validation.
//! - [`evaluation`]: confusion matrices, class-balanced one-vs-all metrics,
//!   bootstrap intervals, sleep statistics and regressions.
//! - [`filters`]: spectra and per-stage activation profiles of the first-layer
//!   filters.
//!
//! Runnable walkthroughs for each part live in the crate's `examples/` directory.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod filters;
pub mod ingest;
pub mod model;
pub mod stage;
pub mod svg;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use stage::SleepStage;

/// Sampling rate every scored channel must have.
pub const SAMPLING_RATE_HZ: f64 = 100.0;
/// Length of a scoring epoch in seconds.
pub const EPOCH_SECONDS: f64 = 30.0;
/// Samples in one 30-s epoch at 100 Hz.
pub const EPOCH_SAMPLES: usize = 3000;
/// Epochs in a context window: two before, the scored one, two after.
pub const CONTEXT_EPOCHS: usize = 5;
/// Samples in a full-size context window.
pub const WINDOW_SAMPLES: usize = EPOCH_SAMPLES * CONTEXT_EPOCHS;
