//! Shared helpers for unit tests.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{Dims, ModelParams, Sample};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_params(dims: Dims, scale: f64, rng: &mut ChaCha8Rng) -> ModelParams {
    let w1 = Array2::from_shape_fn((dims.j, dims.k), |_| rng.random_range(-scale..scale));
    let w2 = Array2::from_shape_fn((dims.l, dims.j), |_| rng.random_range(-scale..scale));
    ModelParams::new(w1, w2).expect("consistent shapes")
}

pub fn random_batch(dims: Dims, n: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let x = Array1::from_shape_fn(dims.k, |_| rng.random_range(-1.0..1.0));
            Sample::new(x, rng.random_range(0..dims.l))
        })
        .collect()
}
