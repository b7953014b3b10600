use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Fan-in scaled normal init, std = sqrt(2 / fan_in).
pub fn he_normal<R: Rng>(rng: &mut R, fan_in: usize, len: usize) -> Vec<f64> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn fan_in_uniform<R: Rng>(rng: &mut R, fan_in: usize, len: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}
