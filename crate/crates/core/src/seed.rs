//! Deterministic seed derivation.
//!
//! Every random stream in the crate (per-sample generation, per-epoch masks,
//! dropout) is seeded from a master seed mixed with the identifiers of the
//! stream, so results do not depend on iteration or thread order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one seed.
pub fn derive(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parts))
}

/// Stream tags, kept distinct so two streams never share a seed.
pub mod stream {
    pub const SAMPLE: u64 = 1;
    pub const PROTOTYPE: u64 = 2;
    pub const TRAIN_MASK: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const INIT: u64 = 6;
    pub const EVAL_MASK: u64 = 7;
}
