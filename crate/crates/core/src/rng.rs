//! Seeded random sources.
//!
//! Every stochastic step in the crate draws from xoshiro256** seeded through
//! splitmix64, so results are reproducible across platforms and runs.

use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::{SplitMix64, Xoshiro256StarStar};

pub type SeededRng = Xoshiro256StarStar;

/// Generator for a 64-bit seed (state filled by splitmix64).
pub fn seeded(seed: u64) -> SeededRng {
    Xoshiro256StarStar::seed_from_u64(seed)
}

/// Per-item seed: `seed ^ index` passed through one splitmix64 round.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    SplitMix64::seed_from_u64(seed ^ index).next_u64()
}

pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    // 53 random mantissa bits.
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    lo + (hi - lo) * u
}

/// Uniform integer in `[lo, hi]`.
pub fn uniform_int<R: RngCore + ?Sized>(rng: &mut R, lo: u64, hi: u64) -> u64 {
    debug_assert!(lo <= hi);
    let span = hi - lo + 1;
    lo + rng.next_u64() % span
}

/// Fisher-Yates shuffle driven by the seeded generator.
pub fn shuffle<T, R: RngCore + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = uniform_int(rng, 0, i as u64) as usize;
        items.swap(i, j);
    }
}
