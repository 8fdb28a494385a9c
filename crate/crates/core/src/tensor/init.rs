//! Seeded weight initialisers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// Uniform in `±sqrt(6 / fan_in)`, for layers followed by a ReLU.
pub fn he_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    uniform(rng, shape, bound)
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`, for the sigmoid heads.
pub fn xavier_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    uniform(rng, shape, bound)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f32) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data)
        .expect("numel matches shape")
        .with_grad()
}
