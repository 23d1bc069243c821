//! Seeded randomness with the stream consumption pinned by this crate.
//!
//! Everything random in the repo flows through these helpers on top of a
//! ChaCha8 stream, so reproducibility depends only on the cipher (stable by
//! construction) and on this file, not on distribution internals elsewhere.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable seed derivation for sub-streams (per-epoch shuffles, restarts).
/// SplitMix64 finalizer over the pair; good avalanche, trivially portable.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in [0, 1) with 53 bits of precision.
pub fn uniform01(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in [0, n) without modulo bias (widening-multiply rejection).
pub fn below(rng: &mut Rng, n: u64) -> u64 {
    assert!(n > 0);
    loop {
        let x = rng.next_u64();
        let m = (x as u128) * (n as u128);
        let lo = m as u64;
        if lo >= n.wrapping_neg() % n {
            return (m >> 64) as u64;
        }
        // reject and redraw; hit only with probability < n / 2^64
    }
}

/// Standard normal via Box-Muller (uses two uniforms per pair, caches none
/// so the stream position is a pure function of draw count).
pub fn normal(rng: &mut Rng) -> f64 {
    let u1 = loop {
        let u = uniform01(rng);
        if u > 0.0 {
            break u;
        }
    };
    let u2 = uniform01(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// In-place Fisher-Yates.
pub fn shuffle<T>(rng: &mut Rng, xs: &mut [T]) {
    for i in (1..xs.len()).rev() {
        let j = below(rng, (i + 1) as u64) as usize;
        xs.swap(i, j);
    }
}
