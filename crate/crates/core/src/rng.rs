//! Seeded random streams.
//!
//! Every random decision in the pipeline draws from a [`Stream`] derived from
//! the global seed and a path of integer tags (stage, task, example index, ...),
//! so results never depend on the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `tags` into `seed`. Distinct tag paths give unrelated seeds.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t.wrapping_add(GOLDEN))))
}

pub fn stream(seed: u64, tags: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_seed(seed, tags))
}

/// Stable tags for the pipeline stages, so streams for different stages never collide.
pub mod tag {
    pub const DATA: u64 = 1;
    pub const SFT_DATA: u64 = 2;
    pub const SFT_TRAIN: u64 = 3;
    pub const INIT: u64 = 4;
    pub const RANKED: u64 = 5;
    pub const LABEL_PAIRS: u64 = 6;
    pub const RM_TRAIN: u64 = 7;
    pub const PPO: u64 = 8;
    pub const EVAL: u64 = 9;
    pub const GRAD_CHECK: u64 = 10;
    pub const THRESHOLD: u64 = 11;
}
