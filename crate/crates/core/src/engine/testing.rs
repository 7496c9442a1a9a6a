//! Helpers shared by the unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

pub(crate) struct TestRng(ChaCha8Rng);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.random_range(lo..hi)
    }
}

/// Entries uniform in [-1, 1).
pub(crate) fn random_tensor(shape: &[usize], rng: &mut TestRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
}
