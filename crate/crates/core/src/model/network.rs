use super::params::{LayerSet, ModelParameters};
use super::{L2Scope, ModelError};
use crate::dataset::{Corpus, WindowKey};
use crate::tensor::{self, PoolIndices, Real, Tensor};
use crate::SleepStage;

/// Name and extent of one activation along the forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerTrace {
    pub name: &'static str,
    pub shape: Vec<usize>,
}

/// Activations kept for the backward pass. ReLU outputs stand in for their
/// inputs: `y > 0` exactly where `x > 0`.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub input: Tensor<T>,
    pub c1: Tensor<T>,
    pub p1_indices: PoolIndices,
    pub stacked: Tensor<T>,
    pub c2: Tensor<T>,
    pub p2_indices: PoolIndices,
    pub flat: Tensor<T>,
    pub h1: Tensor<T>,
    pub h2: Tensor<T>,
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Activation extents after C1, P1, S1, C2, P2, F1, F2 and the output.
    pub fn trace(&self) -> Vec<LayerTrace> {
        let s = |name, t: &Tensor<T>| LayerTrace { name, shape: t.shape().to_vec() };
        vec![
            s("C1", &self.c1),
            LayerTrace { name: "P1", shape: self.p1_indices.output_shape.clone() },
            s("S1", &self.stacked),
            s("C2", &self.c2),
            LayerTrace { name: "P2", shape: self.p2_indices.output_shape.clone() },
            s("F1", &self.h1),
            s("F2", &self.h2),
            s("Output", &self.probs),
        ]
    }

    /// ReLU signs and pooling choices. Two points with equal patterns lie in
    /// the same linear piece of the network.
    pub fn activation_pattern(&self) -> (Vec<bool>, Vec<usize>) {
        let pos = |t: &Tensor<T>| t.data().iter().map(|&v| v > T::zero()).collect::<Vec<_>>();
        let mut signs = pos(&self.c1);
        signs.extend(pos(&self.c2));
        signs.extend(pos(&self.h1));
        signs.extend(pos(&self.h2));
        let mut argmax = self.p1_indices.argmax.clone();
        argmax.extend(&self.p2_indices.argmax);
        (signs, argmax)
    }
}

pub fn forward<T: Real>(params: &ModelParameters<T>, signal: &[T]) -> Result<(Tensor<T>, ForwardCache<T>), ModelError> {
    let cfg = &params.config;
    if signal.len() != cfg.input_len {
        return Err(ModelError::InputLength { expected: cfg.input_len, got: signal.len() });
    }
    let w = &params.weights;
    let scale = T::of(cfg.input_scale);
    let input = Tensor::new(&[1, signal.len()], signal.iter().map(|&v| v * scale).collect())?;

    let mut c1 = tensor::conv1d_valid(&input, &w.c1.weight, &w.c1.bias)?;
    tensor::relu_in_place(&mut c1);
    let (p1, p1_indices) = tensor::maxpool1d(&c1, cfg.p1_size, cfg.p1_stride)?;
    let stacked = tensor::stack(p1)?;

    let c2 = tensor::conv2d_fullheight(&stacked, &w.c2.weight, &w.c2.bias)?;
    let c2_len = c2.shape()[2];
    let mut c2 = c2.reshape(&[cfg.c2_filters, c2_len])?;
    tensor::relu_in_place(&mut c2);
    let (p2, p2_indices) = tensor::maxpool1d(&c2, cfg.p2_size, cfg.p2_stride)?;
    // Row-major: filter-major, then position.
    let flat = p2.flatten();

    let mut h1 = tensor::dense(&flat, &w.f1.weight, &w.f1.bias)?;
    tensor::relu_in_place(&mut h1);
    let mut h2 = tensor::dense(&h1, &w.f2.weight, &w.f2.bias)?;
    tensor::relu_in_place(&mut h2);
    let logits = tensor::dense(&h2, &w.out.weight, &w.out.bias)?;
    let probs = tensor::softmax(&logits);

    Ok((
        probs.clone(),
        ForwardCache { input, c1, p1_indices, stacked, c2, p2_indices, flat, h1, h2, logits, probs },
    ))
}

fn mask_relu<T: Real>(activation: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, &a) in grad.data_mut().iter_mut().zip(activation.data()) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Adds `scale ×` the cross-entropy gradient of one example into `grads`;
/// returns the example's cross-entropy.
fn accumulate<T: Real>(
    params: &ModelParameters<T>,
    cache: &ForwardCache<T>,
    label: SleepStage,
    scale: T,
    grads: &mut LayerSet<T>,
) -> Result<T, ModelError> {
    let w = &params.weights;
    let xent = tensor::softmax_xent(&cache.logits, label.index())?;
    let mut g = xent.grad_logits;
    g.scale(scale);

    let mut g = tensor::dense_backward_into(&cache.h2, &w.out.weight, &g, grads.out.weight.data_mut(), grads.out.bias.data_mut(), true)?
        .expect("requested");
    mask_relu(&cache.h2, &mut g);
    let mut g = tensor::dense_backward_into(&cache.h1, &w.f2.weight, &g, grads.f2.weight.data_mut(), grads.f2.bias.data_mut(), true)?
        .expect("requested");
    mask_relu(&cache.h1, &mut g);
    let g = tensor::dense_backward_into(&cache.flat, &w.f1.weight, &g, grads.f1.weight.data_mut(), grads.f1.bias.data_mut(), true)?
        .expect("requested");

    let g = g.reshape(&params.p2_output_shape())?;
    let mut g = tensor::maxpool1d_backward(&cache.p2_indices, &g)?;
    mask_relu(&cache.c2, &mut g);
    let c2_len = cache.c2.shape()[1];
    let g = g.reshape(&[params.config.c2_filters, 1, c2_len])?;
    let g = tensor::conv2d_fullheight_backward_into(
        &cache.stacked,
        &w.c2.weight,
        &g,
        grads.c2.weight.data_mut(),
        grads.c2.bias.data_mut(),
        !params.c1_frozen,
    )?;

    if let Some(g) = g {
        let g = tensor::unstack(g)?;
        let mut g = tensor::maxpool1d_backward(&cache.p1_indices, &g)?;
        mask_relu(&cache.c1, &mut g);
        tensor::conv1d_backward_into(&cache.input, &w.c1.weight, &g, grads.c1.weight.data_mut(), grads.c1.bias.data_mut(), false)?;
    }
    Ok(xent.loss)
}

impl<T: Real> ModelParameters<T> {
    fn p2_output_shape(&self) -> Vec<usize> {
        let s = self.config.shapes().expect("validated at construction");
        vec![self.config.c2_filters, s.p2_out]
    }

    /// Weight tensors under L2 and their layer names. Frozen layers are
    /// excluded since they never move.
    fn l2_targets(&self) -> Vec<&'static str> {
        match self.config.l2_scope {
            L2Scope::SoftmaxOnly => vec!["out"],
            L2Scope::All => LayerSet::<T>::NAMES.iter().copied().filter(|n| !(self.c1_frozen && *n == "c1")).collect(),
        }
    }

    /// `(λ/2)·Σ w²` over the weights in scope.
    pub fn l2_penalty(&self) -> T {
        let lambda = T::of(self.config.l2);
        let targets = self.l2_targets();
        let weights: Vec<&Tensor<T>> =
            self.weights.layers().into_iter().filter(|(n, _)| targets.contains(n)).map(|(_, l)| &l.weight).collect();
        tensor::l2_penalty(&weights, lambda).0
    }

    fn add_l2_gradient(&self, grads: &mut LayerSet<T>) {
        let lambda = T::of(self.config.l2);
        if lambda == T::zero() {
            return;
        }
        let targets = self.l2_targets();
        for ((name, g), (_, w)) in grads.layers_mut().into_iter().zip(self.weights.layers()) {
            if targets.contains(&name) {
                g.weight.axpy(lambda, &w.weight);
            }
        }
    }
}

/// Gradient of cross-entropy plus L2 penalty for a single example.
pub fn backward<T: Real>(params: &ModelParameters<T>, cache: &ForwardCache<T>, label: SleepStage) -> Result<LayerSet<T>, ModelError> {
    if cache.input.len() != params.config.input_len || cache.c1.shape()[0] != params.config.c1_filters {
        return Err(ModelError::Config("forward cache does not belong to these parameters".into()));
    }
    let mut grads = LayerSet::zeros_like(&params.weights);
    accumulate(params, cache, label, T::one(), &mut grads)?;
    params.add_l2_gradient(&mut grads);
    Ok(grads)
}

#[derive(Clone, Debug)]
pub struct BatchGradients<T> {
    pub grads: LayerSet<T>,
    /// Mean cross-entropy over the batch.
    pub cross_entropy: f64,
    pub penalty: f64,
}

impl<T> BatchGradients<T> {
    pub fn loss(&self) -> f64 {
        self.cross_entropy + self.penalty
    }
}

/// Mean gradient over a batch of windows plus the L2 gradient. Examples are
/// accumulated in batch order, so the result is deterministic.
pub fn batch_gradients<T: Real>(
    params: &ModelParameters<T>,
    corpus: &Corpus<'_>,
    batch: &[WindowKey],
) -> Result<BatchGradients<T>, ModelError> {
    let mut grads = LayerSet::zeros_like(&params.weights);
    let scale = T::one() / T::of(batch.len() as f64);
    let mut raw = vec![0f32; params.config.input_len];
    let mut signal = vec![T::zero(); params.config.input_len];
    let mut total = 0.0;
    for &key in batch {
        if corpus.window_len(key) != raw.len() {
            return Err(ModelError::InputLength { expected: raw.len(), got: corpus.window_len(key) });
        }
        corpus.write_signal(key, &mut raw);
        for (s, &r) in signal.iter_mut().zip(&raw) {
            *s = T::from_sample(r);
        }
        let label = corpus.label(key).expect("window keys address scored epochs");
        let (_, cache) = forward(params, &signal)?;
        let loss = accumulate(params, &cache, label, scale, &mut grads)?;
        total += loss.as_f64();
    }
    let cross_entropy = total / batch.len() as f64;
    if !cross_entropy.is_finite() {
        return Err(ModelError::NonFinite { what: "loss", layer: "out" });
    }
    params.add_l2_gradient(&mut grads);
    Ok(BatchGradients { grads, cross_entropy, penalty: params.l2_penalty().as_f64() })
}

/// Most probable stage; ties go to the lowest stage index.
pub fn predict_from_probs<T: Real>(probs: &[T]) -> SleepStage {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    SleepStage::from_index(best).expect("five classes")
}

pub fn predict<T: Real>(params: &ModelParameters<T>, signal: &[T]) -> Result<SleepStage, ModelError> {
    let (probs, _) = forward(params, signal)?;
    Ok(predict_from_probs(probs.data()))
}
