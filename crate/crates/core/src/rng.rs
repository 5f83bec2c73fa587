//! Seeded randomness.
//!
//! All stochastic code draws from ChaCha8, a counter-based generator whose
//! output is fixed by its algorithm, so corpora and training runs are
//! bit-identical across platforms. Independent consumers get independent
//! streams of the same seed rather than sharing one generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type CvfRng = ChaCha8Rng;

/// Well-known stream ids so that, for instance, dataset generation and
/// weight initialisation never consume each other's draws.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const SAMPLE: u64 = 4;
    pub const FEATURES: u64 = 5;
    pub const EVAL: u64 = 6;
}

pub fn rng_for(seed: u64, stream: u64) -> CvfRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

pub fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
