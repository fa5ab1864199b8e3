//! Seed plumbing. Every random draw in the crate comes from a `ChaCha8Rng`
//! keyed by a 64-bit seed, and independent streams are split off with
//! [`derive_seed`] so that adding a consumer never perturbs another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer over `seed` and a stream tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, tag: u64) -> Rng {
    seeded(derive_seed(seed, tag))
}

// Stream tags used across the crate.
pub(crate) const TAG_LOT_SAMPLING: u64 = 1;
pub(crate) const TAG_GRAD_NOISE: u64 = 2;
pub(crate) const TAG_SHUFFLE: u64 = 3;
pub(crate) const TAG_SPLIT: u64 = 4;
pub(crate) const TAG_INIT: u64 = 5;
pub(crate) const TAG_LOO_INIT: u64 = 6;
pub(crate) const TAG_STABILITY: u64 = 7;
pub(crate) const TAG_SIM_BETA: u64 = 8;
pub(crate) const TAG_SIM_ROWS: u64 = 9;
