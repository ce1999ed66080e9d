//! Seeded random streams.
//!
//! Every stochastic routine takes a `u64` seed; child streams are derived with
//! a SplitMix64 finalizer so that independent jobs never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

pub fn from_seed(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(mix(seed) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Tags used across the crate, kept in one place so streams stay disjoint.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const OOD_POOL: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const MEMBER: u64 = 6;
    pub const MASKS: u64 = 7;
    pub const TRAIN_DATA: u64 = 8;
    pub const TEST_DATA: u64 = 9;
    pub const OOD_EVAL: u64 = 10;
    pub const BOOTSTRAP: u64 = 11;
    pub const STUDENT: u64 = 12;
}
