//! Seed derivation. Every random draw in the crate starts from an explicit
//! 64-bit seed; child streams are derived with a fixed mixing function so that
//! results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed of task `index` in stream `stream` from a master seed.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(master ^ mix64(stream)) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named streams, so that two consumers of the same master seed never share draws.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const HOLDOUT: u64 = 2;
    pub const RESAMPLE: u64 = 3;
    pub const ABLATION: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const PLATT_FOLDS: u64 = 6;
    pub const SYNTH: u64 = 7;
    pub const MODEL: u64 = 8;
}
