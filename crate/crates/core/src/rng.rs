//! Seed derivation and the random stream used by every sampler.
//!
//! Streams are xoshiro256** generators seeded through SplitMix64
//! (`Xoshiro256StarStar::seed_from_u64`). A stream for item `index` of component
//! `tag` under user seed `seed` is seeded with
//! `splitmix64(splitmix64(seed ^ tag) ^ index)`, so every item's draws are fixed
//! regardless of processing order. Uniform doubles take the top 53 bits of
//! `next_u64`; integers in `[0, m)` use the multiply-shift map
//! `(x as u128 * m) >> 64`.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub type Stream = Xoshiro256StarStar;

/// Component tags mixed into derived seeds.
pub mod tag {
    pub const PIXELS: u64 = 0x5049_5845_4c53; // "PIXELS"
    pub const SUBSETS: u64 = 0x5355_4253_4554; // "SUBSET"
    pub const SYNTH: u64 = 0x0053_594e_5448; // "SYNTH"
    pub const MONTE_CARLO: u64 = 0x4d43_4243; // "MCBC"
    pub const BAYES: u64 = 0x0042_4159_4553; // "BAYES"
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ tag) ^ index)
}

pub fn stream(seed: u64, tag: u64, index: u64) -> Stream {
    Stream::seed_from_u64(derive_seed(seed, tag, index))
}

/// Uniform in `[0, 1)`.
pub fn unit(rng: &mut Stream) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `(0, 1]`, safe to take the log of.
pub fn unit_open_below(rng: &mut Stream) -> f64 {
    1.0 - unit(rng)
}

/// Uniform integer in `[0, m)`.
pub fn below(rng: &mut Stream, m: u64) -> u64 {
    ((u128::from(rng.next_u64()) * u128::from(m)) >> 64) as u64
}
