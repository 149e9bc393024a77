//! Seed handling. Every random draw in the crate goes through an [`RngSpec`],
//! which is a base seed plus a stream index. Sub-streams are derived by
//! hashing, never by advancing a shared generator, so the result of trial `t`
//! does not depend on which thread ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a base seed with an index into a new 64-bit seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix64(mix64(base) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Independent child stream, e.g. one per trial or per role.
    pub fn child(&self, index: u64) -> Self {
        Self {
            seed: derive_seed(self.seed, index),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Stream tags used when an instance is generated from one seed.
pub(crate) mod stream {
    pub const MEASUREMENTS: u64 = 1;
    pub const SIGNAL: u64 = 2;
    pub const BIAS: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const PROBE: u64 = 6;
}
