//! Counter-based seed derivation.
//!
//! Every random stream in the crate is a [`SimRng`] seeded from a 64-bit
//! value. Streams that must not interfere (per environment, per trial, per
//! grid cell) derive their seeds from a parent seed and a list of counters,
//! so results never depend on the order in which workers consume randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random source used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Builds the random source for a seed.
pub fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed from `parent` and an ordered list of counters.
pub fn derive(parent: u64, counters: &[u64]) -> u64 {
    counters
        .iter()
        .fold(splitmix64(parent), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Named sub-streams of an experiment's master seed.
pub mod stream {
    pub const PRIOR_DATA: u64 = 1;
    pub const TRAIN_DATA: u64 = 2;
    pub const TRAINING: u64 = 3;
    pub const POLICY: u64 = 4;
    pub const ORACLE: u64 = 5;
    pub const BASELINE: u64 = 6;
    pub const TEST_DATA: u64 = 7;
    pub const TRIAL: u64 = 8;
}
