//! Splittable seed derivation.
//!
//! Child seeds are derived by mixing `(parent, domain, index)` through the
//! SplitMix64 finalizer (Steele, Lea & Flood, "Fast splittable pseudorandom
//! number generators", OOPSLA 2014). Each derived seed initializes its own
//! ChaCha8 stream, so every run and every trace owns an independent generator
//! and results never depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Domain tags separating the purposes a seed is derived for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Run = 1,
    Weights = 2,
    Trace = 3,
    Dependence = 4,
    ArraySize = 5,
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(parent: u64, domain: Domain, index: u64) -> u64 {
    let tagged = splitmix64(parent ^ splitmix64(domain as u64));
    splitmix64(tagged ^ splitmix64(index.wrapping_mul(GOLDEN_GAMMA)))
}

pub fn stream(parent: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, domain, index))
}

/// Seed of run `run_index` within a campaign.
pub fn run_seed(master_seed: u64, run_index: u64) -> u64 {
    derive_seed(master_seed, Domain::Run, run_index)
}
