//! Seed plumbing. Every stochastic step in the crate draws from a ChaCha
//! stream whose seed is derived from a base seed plus a path of labels, so
//! runs are reproducible regardless of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes `base` with each element of `path` into a new 64-bit seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, path: &[u64]) -> Rng {
    rng_from_seed(derive_seed(base, path))
}

/// Stable labels for `derive_seed` paths.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const EVAL_MASK: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const TRAIN_MASK: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const VALIDATION: u64 = 7;
    pub const MCMC: u64 = 8;
    pub const CANDIDATE: u64 = 9;
}
