use super::{mismatch, Real, ShapeError, Tensor};

/// Flat input index of the maximum of every pooled output element.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_kernels: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Tensor<T>,
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    for (a, &b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

/// Signal length of a single-channel input shaped `(L)` or `(1, L)`.
fn signal_len<T: Real>(x: &Tensor<T>, op: &'static str) -> Result<usize, ShapeError> {
    match x.shape() {
        [l] => Ok(*l),
        [1, l] => Ok(*l),
        s => Err(mismatch(op, format!("expected a single-channel signal, got shape {s:?}"))),
    }
}

fn dims2<T: Real>(t: &Tensor<T>, op: &'static str, what: &str) -> Result<(usize, usize), ShapeError> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(mismatch(op, format!("{what} must be 2-D, got {s:?}"))),
    }
}

fn check_bias<T: Real>(bias: &Tensor<T>, filters: usize, op: &'static str) -> Result<(), ShapeError> {
    if bias.len() != filters {
        return Err(mismatch(op, format!("bias has {} entries for {filters} filters", bias.len())));
    }
    Ok(())
}

/// `y[f, i] = bias[f] + Σ_j x[i + j] · kernels[f, j]`; output `(F, L − K + 1)`.
pub fn conv1d_valid<T: Real>(x: &Tensor<T>, kernels: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    const OP: &str = "conv1d_valid";
    let l = signal_len(x, OP)?;
    let (f, k) = dims2(kernels, OP, "kernels")?;
    check_bias(bias, f, OP)?;
    if k > l {
        return Err(mismatch(OP, format!("kernel length {k} exceeds signal length {l}")));
    }
    let out_len = l - k + 1;
    let xs = x.data();
    let mut y = vec![T::zero(); f * out_len];
    for (fi, row) in y.chunks_exact_mut(out_len).enumerate() {
        row.fill(bias.data()[fi]);
        let kern = &kernels.data()[fi * k..(fi + 1) * k];
        for (j, &w) in kern.iter().enumerate() {
            axpy(row, w, &xs[j..j + out_len]);
        }
    }
    Tensor::new(&[f, out_len], y)
}

/// Accumulates kernel and bias gradients of a single-channel convolution into
/// `grad_kernels` / `grad_bias`. Returns the input gradient when asked.
pub fn conv1d_backward_into<T: Real>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_y: &Tensor<T>,
    grad_kernels: &mut [T],
    grad_bias: &mut [T],
    want_grad_x: bool,
) -> Result<Option<Tensor<T>>, ShapeError> {
    const OP: &str = "conv1d_backward";
    let l = signal_len(x, OP)?;
    let (f, k) = dims2(kernels, OP, "kernels")?;
    if k > l || grad_y.shape() != [f, l - k + 1] || grad_kernels.len() != f * k || grad_bias.len() != f {
        return Err(mismatch(OP, format!("grad_y {:?} inconsistent with x {:?} and kernels {:?}", grad_y.shape(), x.shape(), kernels.shape())));
    }
    let out_len = l - k + 1;
    let xs = x.data();
    let mut gx = want_grad_x.then(|| vec![T::zero(); l]);
    for fi in 0..f {
        let gy = &grad_y.data()[fi * out_len..(fi + 1) * out_len];
        grad_bias[fi] += gy.iter().copied().sum::<T>();
        let gk = &mut grad_kernels[fi * k..(fi + 1) * k];
        let kern = &kernels.data()[fi * k..(fi + 1) * k];
        for j in 0..k {
            gk[j] += dot(gy, &xs[j..j + out_len]);
            if let Some(gx) = gx.as_mut() {
                axpy(&mut gx[j..j + out_len], kern[j], gy);
            }
        }
    }
    gx.map(|g| Tensor::new(x.shape(), g)).transpose()
}

/// Gradients of `Σ grad_y ⊙ conv1d_valid(x, kernels, bias)`.
pub fn conv1d_backward<T: Real>(x: &Tensor<T>, kernels: &Tensor<T>, grad_y: &Tensor<T>) -> Result<ConvGrads<T>, ShapeError> {
    let mut gk = Tensor::zeros(kernels.shape());
    let mut gb = Tensor::zeros(&[kernels.shape()[0]]);
    let gx = conv1d_backward_into(x, kernels, grad_y, gk.data_mut(), gb.data_mut(), true)?;
    Ok(ConvGrads { grad_x: gx.expect("requested"), grad_kernels: gk, grad_bias: gb })
}

/// Max pooling along the last axis of `(F, L)`; output `(F, 1 + ⌊(L − P)/S⌋)`.
/// A trailing remainder shorter than a window is dropped; ties keep the first
/// index.
pub fn maxpool1d<T: Real>(x: &Tensor<T>, size: usize, stride: usize) -> Result<(Tensor<T>, PoolIndices), ShapeError> {
    const OP: &str = "maxpool1d";
    let (f, l) = dims2(x, OP, "input")?;
    if size == 0 || stride == 0 {
        return Err(mismatch(OP, "pool size and stride must be positive"));
    }
    if size > l {
        return Err(mismatch(OP, format!("pool size {size} exceeds length {l}")));
    }
    let out_len = 1 + (l - size) / stride;
    let mut y = Vec::with_capacity(f * out_len);
    let mut argmax = Vec::with_capacity(f * out_len);
    for (fi, row) in x.data().chunks_exact(l).enumerate() {
        for o in 0..out_len {
            let start = o * stride;
            let mut best = start;
            for i in start + 1..start + size {
                if row[i] > row[best] {
                    best = i;
                }
            }
            y.push(row[best]);
            argmax.push(fi * l + best);
        }
    }
    Ok((
        Tensor::new(&[f, out_len], y)?,
        PoolIndices { input_shape: vec![f, l], output_shape: vec![f, out_len], argmax },
    ))
}

/// Routes each output gradient to its recorded argmax, summing where windows
/// overlap.
pub fn maxpool1d_backward<T: Real>(indices: &PoolIndices, grad_y: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    const OP: &str = "maxpool1d_backward";
    if grad_y.len() != indices.argmax.len() {
        return Err(mismatch(OP, format!("grad_y has {} values for {} pooled outputs", grad_y.len(), indices.argmax.len())));
    }
    let n: usize = indices.input_shape.iter().product();
    let mut gx = vec![T::zero(); n];
    for (&i, &g) in indices.argmax.iter().zip(grad_y.data()) {
        *gx.get_mut(i).ok_or_else(|| mismatch(OP, format!("argmax {i} out of range {n}")))? += g;
    }
    Tensor::new(&indices.input_shape, gx)
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    relu_in_place(&mut y);
    y
}

pub fn relu_in_place<T: Real>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Passes the gradient where `x > 0`; zero elsewhere, including `x == 0`.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_y: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    if x.shape() != grad_y.shape() {
        return Err(mismatch("relu_backward", format!("{:?} vs {:?}", x.shape(), grad_y.shape())));
    }
    let g = x.data().iter().zip(grad_y.data()).map(|(&v, &g)| if v > T::zero() { g } else { T::zero() }).collect();
    Tensor::new(x.shape(), g)
}

/// `(F, L)` → `(1, F, L)`: a single-channel image whose rows are the signals.
pub fn stack<T: Real>(signals: Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    let (f, l) = dims2(&signals, "stack", "input")?;
    signals.reshape(&[1, f, l])
}

/// Inverse of [`stack`]; also the backward of it.
pub fn unstack<T: Real>(image: Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    match *image.shape() {
        [1, f, l] => image.reshape(&[f, l]),
        ref s => Err(mismatch("unstack", format!("expected (1, F, L), got {s:?}"))),
    }
}

fn fullheight_dims<T: Real>(x: &Tensor<T>, kernels: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize, usize), ShapeError> {
    let (h, l) = match *x.shape() {
        [1, h, l] => (h, l),
        ref s => return Err(mismatch(op, format!("input must be (1, H, L), got {s:?}"))),
    };
    let (f, kh, k) = match *kernels.shape() {
        [f, kh, k] => (f, kh, k),
        ref s => return Err(mismatch(op, format!("kernels must be (F, H, K), got {s:?}"))),
    };
    if kh != h {
        return Err(mismatch(op, format!("kernel height {kh} must equal input height {h}")));
    }
    if k > l {
        return Err(mismatch(op, format!("kernel width {k} exceeds input width {l}")));
    }
    Ok((h, l, f, k))
}

/// Full-height 2-D convolution: `(1, H, L)` with `(F, H, K)` kernels gives
/// `(F, 1, L − K + 1)`.
pub fn conv2d_fullheight<T: Real>(x: &Tensor<T>, kernels: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    const OP: &str = "conv2d_fullheight";
    let (h, l, f, k) = fullheight_dims(x, kernels, OP)?;
    check_bias(bias, f, OP)?;
    let out_len = l - k + 1;
    let xs = x.data();
    let ks = kernels.data();
    let mut y = vec![T::zero(); f * out_len];
    for (fi, row) in y.chunks_exact_mut(out_len).enumerate() {
        row.fill(bias.data()[fi]);
        for hi in 0..h {
            let xrow = &xs[hi * l..(hi + 1) * l];
            let krow = &ks[(fi * h + hi) * k..(fi * h + hi + 1) * k];
            for (j, &w) in krow.iter().enumerate() {
                axpy(row, w, &xrow[j..j + out_len]);
            }
        }
    }
    Tensor::new(&[f, 1, out_len], y)
}

/// Accumulates kernel/bias gradients of [`conv2d_fullheight`]; returns the
/// input gradient when asked.
pub fn conv2d_fullheight_backward_into<T: Real>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_y: &Tensor<T>,
    grad_kernels: &mut [T],
    grad_bias: &mut [T],
    want_grad_x: bool,
) -> Result<Option<Tensor<T>>, ShapeError> {
    const OP: &str = "conv2d_fullheight_backward";
    let (h, l, f, k) = fullheight_dims(x, kernels, OP)?;
    let out_len = l - k + 1;
    if grad_y.len() != f * out_len || grad_kernels.len() != kernels.len() || grad_bias.len() != f {
        return Err(mismatch(OP, format!("grad_y {:?} inconsistent with kernels {:?}", grad_y.shape(), kernels.shape())));
    }
    let xs = x.data();
    let ks = kernels.data();
    let mut gx = want_grad_x.then(|| vec![T::zero(); h * l]);
    for fi in 0..f {
        let gy = &grad_y.data()[fi * out_len..(fi + 1) * out_len];
        grad_bias[fi] += gy.iter().copied().sum::<T>();
        for hi in 0..h {
            let base = (fi * h + hi) * k;
            let xrow = &xs[hi * l..(hi + 1) * l];
            for j in 0..k {
                grad_kernels[base + j] += dot(gy, &xrow[j..j + out_len]);
            }
            if let Some(gx) = gx.as_mut() {
                let grow = &mut gx[hi * l..(hi + 1) * l];
                for j in 0..k {
                    axpy(&mut grow[j..j + out_len], ks[base + j], gy);
                }
            }
        }
    }
    gx.map(|g| Tensor::new(x.shape(), g)).transpose()
}

pub fn conv2d_fullheight_backward<T: Real>(x: &Tensor<T>, kernels: &Tensor<T>, grad_y: &Tensor<T>) -> Result<ConvGrads<T>, ShapeError> {
    let mut gk = Tensor::zeros(kernels.shape());
    let mut gb = Tensor::zeros(&[kernels.shape()[0]]);
    let gx = conv2d_fullheight_backward_into(x, kernels, grad_y, gk.data_mut(), gb.data_mut(), true)?;
    Ok(ConvGrads { grad_x: gx.expect("requested"), grad_kernels: gk, grad_bias: gb })
}

/// `y = W·x + b` for `x` of length N (any shape), `W` `(M, N)`.
pub fn dense<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    const OP: &str = "dense";
    let (m, n) = dims2(w, OP, "weights")?;
    if x.len() != n {
        return Err(mismatch(OP, format!("input has {} values, weights expect {n}", x.len())));
    }
    check_bias(b, m, OP)?;
    let y = w.data().chunks_exact(n).zip(b.data()).map(|(row, &bi)| bi + dot(row, x.data())).collect();
    Tensor::new(&[m], y)
}

/// Accumulates `grad_w += grad_y ⊗ x`, `grad_b += grad_y`; returns `Wᵀ·grad_y`
/// shaped like `x` when asked.
pub fn dense_backward_into<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_y: &Tensor<T>,
    grad_w: &mut [T],
    grad_b: &mut [T],
    want_grad_x: bool,
) -> Result<Option<Tensor<T>>, ShapeError> {
    const OP: &str = "dense_backward";
    let (m, n) = dims2(w, OP, "weights")?;
    if x.len() != n || grad_y.len() != m || grad_w.len() != m * n || grad_b.len() != m {
        return Err(mismatch(OP, format!("x {:?}, W {:?}, grad_y {:?} inconsistent", x.shape(), w.shape(), grad_y.shape())));
    }
    let mut gx = want_grad_x.then(|| vec![T::zero(); n]);
    for (i, &g) in grad_y.data().iter().enumerate() {
        grad_b[i] += g;
        if g == T::zero() {
            continue;
        }
        axpy(&mut grad_w[i * n..(i + 1) * n], g, x.data());
        if let Some(gx) = gx.as_mut() {
            axpy(gx, g, &w.data()[i * n..(i + 1) * n]);
        }
    }
    gx.map(|g| Tensor::new(x.shape(), g)).transpose()
}

pub fn dense_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, grad_y: &Tensor<T>) -> Result<DenseGrads<T>, ShapeError> {
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[w.shape()[0]]);
    let gx = dense_backward_into(x, w, grad_y, gw.data_mut(), gb.data_mut(), true)?;
    Ok(DenseGrads { grad_x: gx.expect("requested"), grad_w: gw, grad_b: gb })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxXent<T> {
    pub probs: Tensor<T>,
    pub loss: T,
    pub grad_logits: Tensor<T>,
}

/// Softmax with cross-entropy against class `label`; max-subtracted so large
/// logits cannot overflow.
pub fn softmax_xent<T: Real>(logits: &Tensor<T>, label: usize) -> Result<SoftmaxXent<T>, ShapeError> {
    if label >= logits.len() {
        return Err(mismatch("softmax_xent", format!("label {label} out of range for {} classes", logits.len())));
    }
    let probs = softmax(logits);
    let z = logits.data();
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let log_sum = z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    let loss = -(z[label] - max - log_sum);
    let mut grad = probs.clone();
    grad.data_mut()[label] -= T::one();
    Ok(SoftmaxXent { probs, loss, grad_logits: grad })
}

pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let z = logits.data();
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let s: T = e.iter().copied().sum();
    Tensor::from_vec(e.into_iter().map(|v| v / s).collect())
}

/// `(λ/2)·Σ w²` over the given weight tensors, with per-tensor gradient
/// addends `λ·w`. Callers pass weights only, never biases.
pub fn l2_penalty<T: Real>(weights: &[&Tensor<T>], lambda: T) -> (T, Vec<Tensor<T>>) {
    let half = T::of(0.5);
    let penalty = weights.iter().map(|w| w.sum_squares()).sum::<T>() * lambda * half;
    let addends = weights
        .iter()
        .map(|w| {
            let mut g = (*w).clone();
            g.scale(lambda);
            g
        })
        .collect();
    (penalty, addends)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn weighted_sum(y: &Tensor<f64>, g: &Tensor<f64>) -> f64 {
        y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn conv1d_hand_cases() {
        let y = conv1d_valid(&t(&[4], &[1., 2., 3., 4.]), &t(&[1, 3], &[1., 0., -1.]), &t(&[1], &[0.])).unwrap();
        assert_eq!(y.data(), &[-2., -2.]);
        let x = t(&[1, 5], &[3., 1., 4., 1., 5.]);
        let y = conv1d_valid(&x, &t(&[1, 1], &[1.]), &t(&[1], &[0.])).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(conv1d_valid(&x, &Tensor::zeros(&[1, 6]), &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn conv1d_full_size_extent() {
        let x = Tensor::<f32>::zeros(&[1, 15000]);
        let y = conv1d_valid(&x, &Tensor::zeros(&[20, 200]), &Tensor::zeros(&[20])).unwrap();
        assert_eq!(y.shape(), &[20, 14801]);
    }

    #[test]
    fn conv1d_bias_gradient_is_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_t(&mut rng, &[1, 10]);
        let k = rand_t(&mut rng, &[1, 3]);
        let gy = rand_t(&mut rng, &[1, 8]);
        let g = conv1d_backward(&x, &k, &gy).unwrap();
        assert!((g.grad_bias.data()[0] - gy.data().iter().sum::<f64>()).abs() < 1e-12);
        let z = conv1d_backward(&x, &k, &Tensor::zeros(&[1, 8])).unwrap();
        assert!(z.grad_x.data().iter().chain(z.grad_kernels.data()).chain(z.grad_bias.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn conv1d_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_t(&mut rng, &[1, 12]);
        let k = rand_t(&mut rng, &[2, 3]);
        let b = rand_t(&mut rng, &[2]);
        let gy = rand_t(&mut rng, &[2, 10]);
        let g = conv1d_backward(&x, &k, &gy).unwrap();
        let fx = |v: &[f64]| weighted_sum(&conv1d_valid(&t(&[1, 12], v), &k, &b).unwrap(), &gy);
        assert!(finite_diff_check(fx, x.data(), g.grad_x.data(), 1e-5).max_rel_error < 1e-6);
        let fk = |v: &[f64]| weighted_sum(&conv1d_valid(&x, &t(&[2, 3], v), &b).unwrap(), &gy);
        assert!(finite_diff_check(fk, k.data(), g.grad_kernels.data(), 1e-5).max_rel_error < 1e-6);
        let fb = |v: &[f64]| weighted_sum(&conv1d_valid(&x, &k, &t(&[2], v)).unwrap(), &gy);
        assert!(finite_diff_check(fb, b.data(), g.grad_bias.data(), 1e-5).max_rel_error < 1e-6);
    }

    #[test]
    fn maxpool_extents_and_values() {
        let (y, idx) = maxpool1d(&t(&[1, 4], &[1., 3., 2., 5.]), 2, 2).unwrap();
        assert_eq!(y.data(), &[3., 5.]);
        assert_eq!(idx.argmax, vec![1, 3]);
        let (y, _) = maxpool1d(&Tensor::<f32>::zeros(&[20, 14801]), 20, 10).unwrap();
        assert_eq!(y.shape(), &[20, 1479]);
        let (y, _) = maxpool1d(&Tensor::<f32>::zeros(&[400, 1450]), 10, 2).unwrap();
        assert_eq!(y.shape(), &[400, 721]);
        assert!(maxpool1d(&t(&[1, 3], &[1., 2., 3.]), 4, 1).is_err());
    }

    #[test]
    fn maxpool_ties_pick_first() {
        let (_, idx) = maxpool1d(&t(&[1, 3], &[2., 2., 1.]), 3, 1).unwrap();
        assert_eq!(idx.argmax, vec![0]);
    }

    #[test]
    fn maxpool_identity_when_unit() {
        let x = t(&[2, 3], &[1., -2., 3., 0.5, 7., -1.]);
        let (y, _) = maxpool1d(&x, 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn maxpool_backward_scatter_and_overlap() {
        let (_, idx) = maxpool1d(&t(&[1, 4], &[1., 3., 2., 5.]), 2, 2).unwrap();
        let gx = maxpool1d_backward(&idx, &t(&[1, 2], &[0.5, -1.])).unwrap();
        assert_eq!(gx.data(), &[0., 0.5, 0., -1.]);
        // Windows [0..3) and [1..4) share the maximum at index 1.
        let (_, idx) = maxpool1d(&t(&[1, 4], &[0., 9., 1., 2.]), 3, 1).unwrap();
        let gx = maxpool1d_backward(&idx, &t(&[1, 2], &[2., 3.])).unwrap();
        assert_eq!(gx.data(), &[0., 5., 0., 0.]);
        let bad = PoolIndices { input_shape: vec![1, 2], output_shape: vec![1, 1], argmax: vec![5] };
        assert!(maxpool1d_backward(&bad, &t(&[1, 1], &[1.])).is_err());
    }

    #[test]
    fn maxpool_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_t(&mut rng, &[2, 17]);
        let gy = rand_t(&mut rng, &[2, 5]);
        let (_, idx) = maxpool1d(&x, 4, 3).unwrap();
        let gx = maxpool1d_backward(&idx, &gy).unwrap();
        let f = |v: &[f64]| weighted_sum(&maxpool1d(&t(&[2, 17], v), 4, 3).unwrap().0, &gy);
        assert!(finite_diff_check(f, x.data(), gx.data(), 1e-6).max_rel_error < 1e-6);
    }

    #[test]
    fn relu_cases() {
        let x = t(&[3], &[-1., 0., 2.]);
        assert_eq!(relu(&x).data(), &[0., 0., 2.]);
        let g = relu_backward(&x, &t(&[3], &[5., 6., 7.])).unwrap();
        assert_eq!(g.data(), &[0., 0., 7.]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_t(&mut rng, &[20]);
        let gy = rand_t(&mut rng, &[20]);
        let gx = relu_backward(&x, &gy).unwrap();
        let f = |v: &[f64]| weighted_sum(&relu(&t(&[20], v)), &gy);
        assert!(finite_diff_check(f, x.data(), gx.data(), 1e-6).max_rel_error < 1e-6);
    }

    #[test]
    fn stack_roundtrip() {
        let x = Tensor::<f64>::zeros(&[20, 1479]);
        let s = stack(x.clone()).unwrap();
        assert_eq!(s.shape(), &[1, 20, 1479]);
        assert_eq!(unstack(s).unwrap(), x);
    }

    #[test]
    fn conv2d_extents_and_degeneracy() {
        let x = Tensor::<f32>::zeros(&[1, 20, 1479]);
        let y = conv2d_fullheight(&x, &Tensor::zeros(&[400, 20, 30]), &Tensor::zeros(&[400])).unwrap();
        assert_eq!(y.shape(), &[400, 1, 1450]);
        assert!(conv2d_fullheight(&x, &Tensor::zeros(&[4, 19, 30]), &Tensor::zeros(&[4])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sig = rand_t(&mut rng, &[1, 30]);
        let k = rand_t(&mut rng, &[3, 7]);
        let b = rand_t(&mut rng, &[3]);
        let one = conv1d_valid(&sig, &k, &b).unwrap();
        let two = conv2d_fullheight(&sig.clone().reshape(&[1, 1, 30]).unwrap(), &k.clone().reshape(&[3, 1, 7]).unwrap(), &b).unwrap();
        assert_eq!(one.data(), two.data());
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_t(&mut rng, &[1, 3, 11]);
        let k = rand_t(&mut rng, &[2, 3, 4]);
        let b = rand_t(&mut rng, &[2]);
        let gy = rand_t(&mut rng, &[2, 1, 8]);
        let g = conv2d_fullheight_backward(&x, &k, &gy).unwrap();
        let fx = |v: &[f64]| weighted_sum(&conv2d_fullheight(&t(&[1, 3, 11], v), &k, &b).unwrap(), &gy);
        assert!(finite_diff_check(fx, x.data(), g.grad_x.data(), 1e-5).max_rel_error < 1e-6);
        let fk = |v: &[f64]| weighted_sum(&conv2d_fullheight(&x, &t(&[2, 3, 4], v), &b).unwrap(), &gy);
        assert!(finite_diff_check(fk, k.data(), g.grad_kernels.data(), 1e-5).max_rel_error < 1e-6);
        let fb = |v: &[f64]| weighted_sum(&conv2d_fullheight(&x, &k, &t(&[2], v)).unwrap(), &gy);
        assert!(finite_diff_check(fb, b.data(), g.grad_bias.data(), 1e-5).max_rel_error < 1e-6);
    }

    #[test]
    fn dense_cases() {
        let x = t(&[3], &[1., 2., 3.]);
        let eye = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_t(&mut rng, &[6]);
        let w = rand_t(&mut rng, &[4, 6]);
        let b = rand_t(&mut rng, &[4]);
        let gy = rand_t(&mut rng, &[4]);
        let g = dense_backward(&x, &w, &gy).unwrap();
        let fx = |v: &[f64]| weighted_sum(&dense(&t(&[6], v), &w, &b).unwrap(), &gy);
        assert!(finite_diff_check(fx, x.data(), g.grad_x.data(), 1e-5).max_rel_error < 1e-6);
        let fw = |v: &[f64]| weighted_sum(&dense(&x, &t(&[4, 6], v), &b).unwrap(), &gy);
        assert!(finite_diff_check(fw, w.data(), g.grad_w.data(), 1e-5).max_rel_error < 1e-6);
        let fb = |v: &[f64]| weighted_sum(&dense(&x, &w, &t(&[4], v)).unwrap(), &gy);
        assert!(finite_diff_check(fb, b.data(), g.grad_b.data(), 1e-5).max_rel_error < 1e-6);
    }

    #[test]
    fn softmax_cases() {
        let r = softmax_xent(&t(&[5], &[0.3; 5]), 2).unwrap();
        assert!(r.probs.data().iter().all(|p| (p - 0.2).abs() < 1e-15));
        assert!((r.loss - 5f64.ln()).abs() < 1e-12);
        let r = softmax_xent(&t(&[5], &[1000., 0., 0., 0., 0.]), 0).unwrap();
        assert!(r.loss.abs() < 1e-12 && r.loss.is_finite());
        assert!(r.probs.data().iter().all(|p| p.is_finite()));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = rand_t(&mut rng, &[5]);
        let r = softmax_xent(&z, 3).unwrap();
        assert!((r.probs.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let f = |v: &[f64]| softmax_xent(&t(&[5], v), 3).unwrap().loss;
        assert!(finite_diff_check(f, z.data(), r.grad_logits.data(), 1e-5).max_rel_error < 1e-6);
    }

    #[test]
    fn l2_cases() {
        let w = t(&[1], &[2.0]);
        let (p, g) = l2_penalty(&[&w], 0.5);
        assert_eq!(p, 1.0);
        assert_eq!(g[0].data(), &[1.0]);
        let (p, g) = l2_penalty(&[&w], 0.0);
        assert_eq!(p, 0.0);
        assert_eq!(g[0].data(), &[0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = rand_t(&mut rng, &[7]);
        let (_, g) = l2_penalty(&[&w], 0.3);
        let f = |v: &[f64]| l2_penalty(&[&t(&[7], v)], 0.3).0;
        assert!(finite_diff_check(f, w.data(), g[0].data(), 1e-5).max_rel_error < 1e-6);
    }

    #[test]
    fn f32_gradients_within_looser_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x: Tensor<f32> = rand_t(&mut rng, &[1, 12]).cast();
        let k: Tensor<f32> = rand_t(&mut rng, &[2, 3]).cast();
        let b: Tensor<f32> = Tensor::zeros(&[2]);
        let gy: Tensor<f32> = rand_t(&mut rng, &[2, 10]).cast();
        let g = conv1d_backward(&x, &k, &gy).unwrap();
        let f = |v: &[f32]| {
            let y = conv1d_valid(&Tensor::new(&[1, 12], v.to_vec()).unwrap(), &k, &b).unwrap();
            // Accumulate in f64 so the check measures the op, not the sum.
            y.data().iter().zip(gy.data()).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum::<f64>() as f32
        };
        assert!(finite_diff_check(f, x.data(), g.grad_x.data(), 1e-2).max_rel_error < 1e-4);
    }
}
