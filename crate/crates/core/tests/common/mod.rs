#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use temporal_relevance::{ClipTensor, ModelGraph, Tensor};

/// Uniform `[-1, 1]` clip shaped for `model`.
pub fn random_clip(model: &ModelGraph, seed: u64) -> ClipTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [model.expected_frames, model.input.channels, model.input.height, model.input.width];
    let t = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..=1.0));
    ClipTensor::new(t, format!("clip_{seed:04}"), None).unwrap()
}

pub fn row_sum(row: &[f64]) -> f64 {
    row.iter().sum()
}
