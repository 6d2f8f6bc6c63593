//! Deterministic random sampling primitives.
//!
//! Outputs of a run must be byte-identical for a fixed seed, across job
//! counts and library upgrades, so sampling is pinned down to the raw
//! ChaCha8 stream: a fixed u64-to-f64 mapping and rejection sampling for
//! bounded integers, no distribution adapters from external crates.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform integer in [0, n). n = 0 or 1 returns 0 without consuming draws.
pub fn uniform_u64(rng: &mut Rng, n: u64) -> u64 {
    if n <= 1 {
        return 0;
    }
    // Rejection keeps the draw exactly uniform.
    let cap = u64::MAX - u64::MAX % n;
    loop {
        let x = rng.next_u64();
        if x < cap {
            return x % n;
        }
    }
}

/// Uniform f64 in [0, 1), 53 random bits.
pub fn unit_f64(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform f64 in (0, 1]; safe as a logarithm argument.
pub fn positive_unit_f64(rng: &mut Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

pub fn bernoulli(rng: &mut Rng, p: f64) -> bool {
    unit_f64(rng) < p
}

/// Stable seed derivation for per-task streams: FNV-1a over the textual
/// parts, mixed with the run seed. Changing this changes every seeded
/// output, so it is part of the output format.
pub fn derive_seed(run_seed: u64, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in part.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff; // separator so ("ab","c") differs from ("a","bc")
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ run_seed.rotate_left(17)
}
