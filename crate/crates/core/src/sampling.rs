//! Deterministic pseudo-random fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::Field;

/// Uniform values in `[-1, 1)`.
pub fn random_field(len: usize, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Uniform values in `[0.5, 1.5)`.
pub fn positive_random_field(len: usize, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(0.5..1.5)).collect()
}

/// A field with zero plain mean (equal node weights).
pub fn zero_mean_random_field(len: usize, seed: u64) -> Field {
    let mut f = random_field(len, seed);
    let mean = f.iter().sum::<f64>() / len as f64;
    f.iter_mut().for_each(|v| *v -= mean);
    f
}
