//! Seeded random streams.
//!
//! Every experiment draws from ChaCha8 keyed by a 64-bit seed. Independent
//! parts of an experiment (demos, queries, projections, ...) use distinct
//! stream ids on the same key, so adding draws to one part never shifts
//! another.

use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type GsRng = ChaCha8Rng;

/// Well-known stream ids.
pub mod streams {
    pub const PARAMS: u64 = 1;
    pub const DEMOS: u64 = 2;
    pub const QUERIES: u64 = 3;
    pub const TEST: u64 = 4;
    pub const PROJECTION: u64 = 5;
    pub const SUBSETS: u64 = 6;
    pub const ANCHORS: u64 = 7;
    pub const TRAINING: u64 = 8;
    pub const PROBE: u64 = 9;
    pub const INIT: u64 = 10;
}

pub fn stream(seed: u64, id: u64) -> GsRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[inline]
pub fn normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::of(rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vec<T: Scalar, R: Rng + ?Sized>(rng: &mut R, len: usize, std: f64) -> Vec<T> {
    (0..len)
        .map(|_| T::of(std * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// Derive a child seed (e.g. one per trial) from a parent seed.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
