//! The sleep-scoring network.
//!
//! ```text
//! input (1, L) ─C1→ (20, L−199) ─ReLU─P1(20/10)→ (20, ·) ─stack→ (1, 20, ·)
//!   ─C2 (20×30)→ (400, ·) ─ReLU─P2(10/2)→ (400, ·) ─flatten→ F1 500 ─ReLU→ F2 500 ─ReLU→ 5 ─softmax
//! ```
//!
//! With the default 15000-sample input the extents are
//! (20,14801) → (20,1479) → (1,20,1479) → (400,1450) → (400,721) → 288400 → 500 → 500 → 5.

pub mod checkpoint;
pub mod morlet;
mod network;
mod params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::ShapeError;

pub use morlet::{default_morlet_frequencies, make_morlet_bank, MorletBank};
pub use network::{backward, batch_gradients, forward, predict, predict_from_probs, BatchGradients, ForwardCache, LayerTrace};
pub use params::{init_params, sgd_step, Layer, LayerSet, ModelParameters};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input has {got} samples, the network expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("non-finite {what} in layer {layer}")]
    NonFinite { what: &'static str, layer: &'static str },
    #[error("Morlet bank: {0}")]
    Morlet(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstLayerMode {
    Trainable,
    /// First layer is a fixed Morlet wavelet bank that is never updated.
    FixedMorlet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Scope {
    /// Every weight tensor (biases excluded).
    All,
    /// Only the output (softmax) layer weights.
    SoftmaxOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MorletConfig {
    /// Center frequencies in Hz, one per first-layer filter. Empty means
    /// log-spaced from `min_hz` to `max_hz`.
    pub center_freqs: Vec<f64>,
    pub min_hz: f64,
    pub max_hz: f64,
    pub cycles: f64,
}

impl Default for MorletConfig {
    fn default() -> Self {
        MorletConfig { center_freqs: Vec::new(), min_hz: 0.5, max_hz: 25.0, cycles: 6.0 }
    }
}

impl MorletConfig {
    pub fn frequencies(&self, count: usize) -> Vec<f64> {
        if self.center_freqs.is_empty() {
            default_morlet_frequencies(self.min_hz, self.max_hz, count)
        } else {
            self.center_freqs.clone()
        }
    }
}

/// Architecture and optimization settings. The defaults are the full-size
/// network; optimizer defaults are engineering choices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_len: usize,
    /// Multiplies every input sample (µV) before the first layer, so that
    /// typical EEG amplitudes reach the network at roughly unit scale.
    pub input_scale: f64,
    pub c1_filters: usize,
    pub c1_len: usize,
    pub p1_size: usize,
    pub p1_stride: usize,
    pub c2_filters: usize,
    pub c2_len: usize,
    pub p2_size: usize,
    pub p2_stride: usize,
    pub f1: usize,
    pub f2: usize,
    pub classes: usize,
    pub l2: f64,
    pub l2_scope: L2Scope,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub seed: u64,
    pub first_layer: FirstLayerMode,
    pub morlet: MorletConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_len: crate::WINDOW_SAMPLES,
            input_scale: 0.05,
            c1_filters: 20,
            c1_len: 200,
            p1_size: 20,
            p1_stride: 10,
            c2_filters: 400,
            c2_len: 30,
            p2_size: 10,
            p2_stride: 2,
            f1: 500,
            f2: 500,
            classes: 5,
            l2: 1e-4,
            l2_scope: L2Scope::All,
            learning_rate: 0.003,
            momentum: 0.9,
            batch_size: 100,
            max_iterations: 20_000,
            eval_every: 500,
            patience: 10,
            seed: 0,
            first_layer: FirstLayerMode::Trainable,
            morlet: MorletConfig::default(),
        }
    }
}

/// Extents of every intermediate activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShapes {
    pub c1_out: usize,
    pub p1_out: usize,
    pub c2_out: usize,
    pub p2_out: usize,
    pub flat: usize,
}

impl ModelConfig {
    /// A small network with the same topology, for gradient checks and
    /// desk-scale training: input 300, C1 4×20, P1 (4,2), C2 8×(4,5),
    /// P2 (4,2), F1 16, F2 16.
    pub fn reduced() -> Self {
        ModelConfig {
            input_len: 300,
            c1_filters: 4,
            c1_len: 20,
            p1_size: 4,
            p1_stride: 2,
            c2_filters: 8,
            c2_len: 5,
            p2_size: 4,
            p2_stride: 2,
            f1: 16,
            f2: 16,
            batch_size: 50,
            eval_every: 100,
            max_iterations: 3000,
            ..ModelConfig::default()
        }
    }

    pub fn shapes(&self) -> Result<LayerShapes, ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        let dims = [
            self.input_len,
            self.c1_filters,
            self.c1_len,
            self.p1_size,
            self.p1_stride,
            self.c2_filters,
            self.c2_len,
            self.p2_size,
            self.p2_stride,
            self.f1,
            self.f2,
            self.classes,
        ];
        if dims.contains(&0) {
            return bad("all extents must be positive".into());
        }
        if self.c1_len > self.input_len {
            return bad(format!("C1 length {} exceeds input {}", self.c1_len, self.input_len));
        }
        let c1_out = self.input_len - self.c1_len + 1;
        if self.p1_size > c1_out {
            return bad(format!("P1 size {} exceeds C1 output {c1_out}", self.p1_size));
        }
        let p1_out = 1 + (c1_out - self.p1_size) / self.p1_stride;
        if self.c2_len > p1_out {
            return bad(format!("C2 width {} exceeds P1 output {p1_out}", self.c2_len));
        }
        let c2_out = p1_out - self.c2_len + 1;
        if self.p2_size > c2_out {
            return bad(format!("P2 size {} exceeds C2 output {c2_out}", self.p2_size));
        }
        let p2_out = 1 + (c2_out - self.p2_size) / self.p2_stride;
        Ok(LayerShapes { c1_out, p1_out, c2_out, p2_out, flat: self.c2_filters * p2_out })
    }

    pub fn validate(&self) -> Result<LayerShapes, ModelError> {
        let shapes = self.shapes()?;
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(self.classes) {
            return Err(ModelError::Config(format!("batch size {} must be a positive multiple of {}", self.batch_size, self.classes)));
        }
        if self.classes != crate::SleepStage::COUNT {
            return Err(ModelError::Config(format!("{} classes; sleep scoring has 5", self.classes)));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(ModelError::Config(format!("input scale {} must be positive", self.input_scale)));
        }
        if !(self.learning_rate.is_finite() && self.momentum.is_finite() && self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(ModelError::Config("learning rate, momentum and L2 must be finite, L2 non-negative".into()));
        }
        Ok(shapes)
    }

    /// True when both configs describe the same parameter tensors.
    pub fn same_architecture(&self, other: &ModelConfig) -> bool {
        let a = (self.input_len, self.c1_filters, self.c1_len, self.p1_size, self.p1_stride, self.c2_filters, self.c2_len);
        let b = (other.input_len, other.c1_filters, other.c1_len, other.p1_size, other.p1_stride, other.c2_filters, other.c2_len);
        a == b
            && (self.p2_size, self.p2_stride, self.f1, self.f2, self.classes)
                == (other.p2_size, other.p2_stride, other.f1, other.f2, other.classes)
    }

    /// Trainable scalars in each layer: (weights + biases) for C1, C2, F1, F2, output.
    pub fn parameter_counts(&self) -> Result<[usize; 5], ModelError> {
        let s = self.shapes()?;
        Ok([
            self.c1_filters * self.c1_len + self.c1_filters,
            self.c2_filters * self.c1_filters * self.c2_len + self.c2_filters,
            self.f1 * s.flat + self.f1,
            self.f2 * self.f1 + self.f2,
            self.classes * self.f2 + self.classes,
        ])
    }
}
