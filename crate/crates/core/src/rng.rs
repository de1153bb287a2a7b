//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by `(seed, tag, index)`, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Distinct tags keep unrelated consumers of one seed apart.
pub mod tag {
    pub const SPLIT: u64 = 0x5350_4c49;
    pub const PLAN: u64 = 0x504c_414e;
    pub const CCAR: u64 = 0x4343_4152;
    pub const CNAR: u64 = 0x434e_4152;
    pub const CNAR_PROPAGATE: u64 = 0x5052_4f50;
    pub const CNAR_ANCHORS: u64 = 0x414e_4348;
    pub const MODEL_INIT: u64 = 0x494e_4954;
    pub const GATE_INIT: u64 = 0x4741_5445;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const DROPOUT: u64 = 0x4452_4f50;
    pub const TRIAL: u64 = 0x5452_4941;
    pub const SAMPLE: u64 = 0x5341_4d50;
    pub const CORRUPT: u64 = 0x434f_5252;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministically combines a seed with a stream tag and an index.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

pub fn stream(seed: u64, tag: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tag, index))
}
