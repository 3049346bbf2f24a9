//! Counter-based seeding. Every task derives its own stream from the
//! experiment seed plus a tuple of integer keys, so results do not depend on
//! the order in which a thread pool schedules work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type McvRng = ChaCha8Rng;

/// Stream tags so that different consumers inside a repetition never share
/// a sequence.
pub mod tag {
    pub const TRAIN: u64 = 1;
    pub const CAL: u64 = 2;
    pub const TEST: u64 = 3;
    pub const IMPUTER: u64 = 4;
    pub const MODEL: u64 = 5;
    pub const RATIO: u64 = 6;
    pub const ARC: u64 = 7;
    pub const MECHANISM: u64 = 8;
    pub const EXTRA: u64 = 9;
    pub const BOUND: u64 = 10;
    pub const PERTURB: u64 = 11;
    pub const SPLIT: u64 = 12;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a key path into a single 64-bit value.
pub fn mix(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn stream(seed: u64, keys: &[u64]) -> McvRng {
    ChaCha8Rng::seed_from_u64(mix(seed, keys))
}
