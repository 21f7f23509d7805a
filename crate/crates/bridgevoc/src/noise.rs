//! Seeded randomness: one stream per (seed, step) so that a resumed run
//! draws exactly what an uninterrupted run would.

use bridgevoc_core::NoiseSource;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Generator for step `step` of a run seeded with `seed`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Standard normal draws from a ChaCha stream.
#[derive(Debug, Clone)]
pub struct GaussianNoise(pub ChaCha8Rng);

impl GaussianNoise {
    pub fn seeded(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl NoiseSource for GaussianNoise {
    fn standard_normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }
}
