//! Layer-by-layer output shapes and parameter counts of the full network,
//! in trainable and fixed-Morlet first-layer modes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use somno::model::{forward, init_params, FirstLayerMode, ModelConfig, ModelParameters};

fn main() -> Result<(), somno::model::ModelError> {
    let config = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params: ModelParameters<f32> = init_params(&config, &mut rng)?;
    let x: Vec<f32> = (0..config.input_len).map(|_| rng.random_range(-40.0..40.0)).collect();
    let (probs, cache) = forward(&params, &x)?;
    for t in cache.trace() {
        println!("{:7} {:?}", t.name, t.shape);
    }
    println!("probabilities {:?}", probs.data());
    let counts = config.parameter_counts()?;
    println!("parameters per layer {counts:?}, total {}", counts.iter().sum::<usize>());
    drop(params);

    let morlet = ModelConfig { first_layer: FirstLayerMode::FixedMorlet, ..ModelConfig::default() };
    let p: ModelParameters<f32> = init_params(&morlet, &mut rng)?;
    println!("fixed-Morlet mode: {} trainable of {}", p.trainable_count(), p.weights.scalar_count());
    Ok(())
}
