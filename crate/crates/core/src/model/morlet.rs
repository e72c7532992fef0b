//! Real Morlet wavelet kernels for a fixed first layer.

use super::ModelError;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct MorletBank<T> {
    /// `(F, K)` kernels, one per center frequency, each with unit energy.
    pub kernels: Tensor<T>,
    pub frequencies: Vec<f64>,
    /// Frequencies whose Gaussian envelope is still above 1% at the kernel
    /// edge, i.e. the wavelet is visibly truncated.
    pub truncated: Vec<f64>,
}

/// `count` log-spaced frequencies from `min_hz` to `max_hz` inclusive.
pub fn default_morlet_frequencies(min_hz: f64, max_hz: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![(min_hz * max_hz).sqrt()],
        n => {
            let (a, b) = (min_hz.ln(), max_hz.ln());
            (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
        }
    }
}

/// `cos(2πft)·exp(−t²/2σ²)` with `σ = cycles/(2πf)`, sampled at `fs` on a
/// grid centered in the kernel, then scaled to unit L2 norm.
pub fn make_morlet_bank<T: Real>(frequencies: &[f64], cycles: f64, fs: f64, len: usize) -> Result<MorletBank<T>, ModelError> {
    if len == 0 || frequencies.is_empty() {
        return Err(ModelError::Morlet("empty bank".into()));
    }
    if !(cycles > 0.0 && fs > 0.0) {
        return Err(ModelError::Morlet(format!("cycles {cycles} and sampling rate {fs} must be positive")));
    }
    let nyquist = fs / 2.0;
    let center = (len as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(frequencies.len() * len);
    let mut truncated = Vec::new();
    for &f in frequencies {
        if !(f > 0.0 && f < nyquist) {
            return Err(ModelError::Morlet(format!("center frequency {f} Hz outside (0, {nyquist})")));
        }
        let sigma = cycles / (2.0 * std::f64::consts::PI * f);
        let envelope = |t: f64| (-t * t / (2.0 * sigma * sigma)).exp();
        let kernel: Vec<f64> = (0..len)
            .map(|j| {
                let t = (j as f64 - center) / fs;
                (2.0 * std::f64::consts::PI * f * t).cos() * envelope(t)
            })
            .collect();
        if envelope(center / fs) > 0.01 {
            log::warn!("Morlet kernel at {f:.2} Hz is truncated by a {len}-sample window");
            truncated.push(f);
        }
        let norm = kernel.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ModelError::Morlet(format!("kernel at {f} Hz has zero energy")));
        }
        data.extend(kernel.iter().map(|v| T::of(v / norm)));
    }
    Ok(MorletBank { kernels: Tensor::new(&[frequencies.len(), len], data)?, frequencies: frequencies.to_vec(), truncated })
}
