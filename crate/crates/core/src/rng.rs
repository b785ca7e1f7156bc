//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic component draws from a `ChaCha8Rng` whose seed is a
//! pure function of a master seed and a path of integer tags (row index,
//! detector index, sample index, ...). Results therefore do not depend on
//! evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags used across the crate so unrelated draws never share a seed.
pub mod tag {
    pub const SCENARIO: u64 = 1;
    pub const DETECTOR: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const WEIGHTS: u64 = 5;
    pub const SAMPLE: u64 = 6;
    pub const MEASUREMENT: u64 = 7;
    pub const CHAIN: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of tags into a new 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
