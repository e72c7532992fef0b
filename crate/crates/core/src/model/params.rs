use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::morlet::make_morlet_bank;
use super::{FirstLayerMode, ModelConfig, ModelError};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Layer<T> {
    fn zeros(weight_shape: &[usize]) -> Self {
        Layer { weight: Tensor::zeros(weight_shape), bias: Tensor::zeros(&[weight_shape[0]]) }
    }

    fn zeros_like(other: &Layer<T>) -> Self {
        Layer::zeros(other.weight.shape())
    }
}

/// One tensor pair per layer; used for weights, velocities and gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSet<T> {
    pub c1: Layer<T>,
    pub c2: Layer<T>,
    pub f1: Layer<T>,
    pub f2: Layer<T>,
    pub out: Layer<T>,
}

impl<T: Real> LayerSet<T> {
    pub const NAMES: [&'static str; 5] = ["c1", "c2", "f1", "f2", "out"];

    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        let s = config.shapes()?;
        Ok(LayerSet {
            c1: Layer::zeros(&[config.c1_filters, config.c1_len]),
            c2: Layer::zeros(&[config.c2_filters, config.c1_filters, config.c2_len]),
            f1: Layer::zeros(&[config.f1, s.flat]),
            f2: Layer::zeros(&[config.f2, config.f1]),
            out: Layer::zeros(&[config.classes, config.f2]),
        })
    }

    pub fn zeros_like(other: &LayerSet<T>) -> Self {
        LayerSet {
            c1: Layer::zeros_like(&other.c1),
            c2: Layer::zeros_like(&other.c2),
            f1: Layer::zeros_like(&other.f1),
            f2: Layer::zeros_like(&other.f2),
            out: Layer::zeros_like(&other.out),
        }
    }

    pub fn layers(&self) -> [(&'static str, &Layer<T>); 5] {
        [("c1", &self.c1), ("c2", &self.c2), ("f1", &self.f1), ("f2", &self.f2), ("out", &self.out)]
    }

    pub fn layers_mut(&mut self) -> [(&'static str, &mut Layer<T>); 5] {
        [
            ("c1", &mut self.c1),
            ("c2", &mut self.c2),
            ("f1", &mut self.f1),
            ("f2", &mut self.f2),
            ("out", &mut self.out),
        ]
    }

    pub fn fill(&mut self, v: T) {
        for (_, l) in self.layers_mut() {
            l.weight.fill(v);
            l.bias.fill(v);
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.weight.len() + l.bias.len()).sum()
    }

    /// All tensors as `(name, tensor)` in a fixed order, e.g. `"c1.weight"`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers()
            .into_iter()
            .flat_map(|(n, l)| [(format!("{n}.weight"), &l.weight), (format!("{n}.bias"), &l.bias)])
            .collect()
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.layers_mut()
            .into_iter()
            .flat_map(|(n, l)| [(format!("{n}.weight"), &mut l.weight), (format!("{n}.bias"), &mut l.bias)])
            .collect()
    }
}

/// Weights, momentum velocities and the frozen flag of the first layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters<T> {
    pub config: ModelConfig,
    pub weights: LayerSet<T>,
    pub velocity: LayerSet<T>,
    pub c1_frozen: bool,
}

impl<T: Real> ModelParameters<T> {
    /// All-zero parameters for `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.shapes()?;
        let weights = LayerSet::zeros(config)?;
        Ok(ModelParameters {
            velocity: LayerSet::zeros_like(&weights),
            weights,
            config: config.clone(),
            c1_frozen: config.first_layer == FirstLayerMode::FixedMorlet,
        })
    }

    pub fn trainable_count(&self) -> usize {
        let all = self.weights.scalar_count();
        if self.c1_frozen {
            all - self.weights.c1.weight.len() - self.weights.c1.bias.len()
        } else {
            all
        }
    }
}

fn fill_normal<T: Real, R: Rng + ?Sized>(t: &mut Tensor<T>, std: f64, rng: &mut R) {
    let normal = Normal::new(0.0, std).expect("positive std");
    for v in t.data_mut() {
        *v = T::of(normal.sample(rng));
    }
}

/// He-normal weights for the ReLU layers (`std = √(2/fan_in)`), `√(1/fan_in)`
/// for the softmax layer, zero biases. In fixed-Morlet mode the first layer
/// holds the wavelet bank instead.
pub fn init_params<T: Real, R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<ModelParameters<T>, ModelError> {
    config.validate()?;
    let mut p = ModelParameters::zeros(config)?;
    let s = config.shapes()?;
    let w = &mut p.weights;
    match config.first_layer {
        FirstLayerMode::Trainable => fill_normal(&mut w.c1.weight, (2.0 / config.c1_len as f64).sqrt(), rng),
        FirstLayerMode::FixedMorlet => {
            let freqs = config.morlet.frequencies(config.c1_filters);
            if freqs.len() != config.c1_filters {
                return Err(ModelError::Morlet(format!("{} center frequencies for {} filters", freqs.len(), config.c1_filters)));
            }
            let bank = make_morlet_bank::<T>(&freqs, config.morlet.cycles, crate::SAMPLING_RATE_HZ, config.c1_len)?;
            w.c1.weight = bank.kernels;
        }
    }
    fill_normal(&mut w.c2.weight, (2.0 / (config.c1_filters * config.c2_len) as f64).sqrt(), rng);
    fill_normal(&mut w.f1.weight, (2.0 / s.flat as f64).sqrt(), rng);
    fill_normal(&mut w.f2.weight, (2.0 / config.f1 as f64).sqrt(), rng);
    fill_normal(&mut w.out.weight, (1.0 / config.f2 as f64).sqrt(), rng);
    Ok(p)
}

/// Momentum step `v ← μ·v − η·g`, `w ← w + v` on every trainable tensor.
/// Nothing is modified if any gradient is non-finite.
pub fn sgd_step<T: Real>(
    params: &mut ModelParameters<T>,
    grads: &LayerSet<T>,
    learning_rate: f64,
    momentum: f64,
) -> Result<(), ModelError> {
    for (name, g) in grads.layers() {
        if params.c1_frozen && name == "c1" {
            continue;
        }
        if g.weight.check_finite().is_err() || g.bias.check_finite().is_err() {
            return Err(ModelError::NonFinite { what: "gradient", layer: name });
        }
    }
    let (lr, mu) = (T::of(learning_rate), T::of(momentum));
    let frozen = params.c1_frozen;
    let ModelParameters { weights, velocity, .. } = params;
    for (((name, w), (_, v)), (_, g)) in weights.layers_mut().into_iter().zip(velocity.layers_mut()).zip(grads.layers()) {
        if frozen && name == "c1" {
            continue;
        }
        for (wt, vt, gt) in [(&mut w.weight, &mut v.weight, &g.weight), (&mut w.bias, &mut v.bias, &g.bias)] {
            for ((wi, vi), &gi) in wt.data_mut().iter_mut().zip(vt.data_mut()).zip(gt.data()) {
                *vi = mu * *vi - lr * gi;
                *wi += *vi;
            }
        }
    }
    Ok(())
}
