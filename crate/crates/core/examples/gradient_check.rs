//! Compares backpropagated gradients of the reduced network with central
//! finite differences, skipping points where a ReLU or pool argmax flips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use somno::model::{backward, forward, init_params, ModelConfig, ModelParameters};
use somno::tensor::{finite_diff_check_with, softmax_xent};
use somno::SleepStage;

fn main() {
    let config = ModelConfig { l2: 1e-3, ..ModelConfig::reduced() };
    let params: ModelParameters<f64> = init_params(&config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..config.input_len).map(|_| rng.random_range(-30.0..30.0)).collect();
    let label = SleepStage::N2;
    let (_, cache) = forward(&params, &x).unwrap();
    let pattern = cache.activation_pattern();
    let grads = backward(&params, &cache, label).unwrap();

    for (name, analytic) in grads.named_tensors() {
        let point = params.weights.named_tensors().into_iter().find(|(n, _)| *n == name).unwrap().1.data().to_vec();
        let mut p = params.clone();
        let report = finite_diff_check_with(
            |v: &[f64]| {
                p.weights.named_tensors_mut().into_iter().find(|(n, _)| *n == name).unwrap().1.data_mut().copy_from_slice(v);
                let (_, c) = forward(&p, &x).unwrap();
                (c.activation_pattern() == pattern)
                    .then(|| softmax_xent(&c.logits, label.index()).unwrap().loss + p.l2_penalty())
            },
            &point,
            analytic.data(),
            1e-5,
        );
        println!("{name:10} checked {:5}  max relative error {:.2e}", report.checked, report.max_rel_error);
    }
}
