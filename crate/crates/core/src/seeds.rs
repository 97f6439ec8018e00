//! Seed derivation for reproducible, independent random streams.
//!
//! Every source of randomness in the crate takes an explicit seed or
//! generator. Sub-streams (per step, per sample, per purpose) are derived
//! from a master seed with a splitmix64 chain, so resuming a run at step
//! `k` regenerates exactly the streams an uninterrupted run would see.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a seed with a tag, producing a new independent seed.
pub fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Mix a seed with a sequence of tags (e.g. `[step, sample, purpose]`).
pub fn mix_all(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(seed, |s, &t| mix(s, t))
}

/// Deterministic generator for a derived seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags for the different consumers of randomness.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const MASKING: u64 = 2;
    pub const ITM_PAIRING: u64 = 3;
    pub const PATCH_SAMPLE: u64 = 4;
    pub const MPP_MASK: u64 = 5;
    pub const AUGMENT: u64 = 6;
    pub const DATA_ORDER: u64 = 7;
    pub const NEGATIVES: u64 = 8;
    pub const HEAD_INIT: u64 = 9;
    pub const EVAL: u64 = 10;
}
