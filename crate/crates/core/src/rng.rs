//! Seeded randomness.
//!
//! Every random choice in the crate draws from ChaCha8 (`rand_chacha`,
//! whose output stream is stable across releases) seeded with
//! `ChaCha8Rng::seed_from_u64(seed)`. Imputers read stream 0, amputation
//! reads stream 1, so a trial can reuse one seed for both without the two
//! consumers seeing correlated draws.
//!
//! Draws are derived from raw `next_u64` words rather than `rand`'s
//! distribution helpers, so the mapping from seed to outcome is fixed here
//! and portable to any ChaCha8 implementation:
//!
//! * uniform index in `0..n`: Lemire's multiply-shift with rejection;
//! * uniform real in `[0, 1)`: the top 53 bits times 2^-53.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const IMPUTATION_STREAM: u64 = 0;
pub const AMPUTATION_STREAM: u64 = 1;

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Unbiased uniform draw from `0..n`. `n` must be positive.
pub fn uniform_index<R: RngCore>(rng: &mut R, n: usize) -> usize {
    assert!(n > 0, "uniform_index over an empty range");
    let n = n as u64;
    let threshold = n.wrapping_neg() % n;
    loop {
        let m = u128::from(rng.next_u64()) * u128::from(n);
        if (m as u64) >= threshold {
            return (m >> 64) as usize;
        }
    }
}

/// Uniform real in `[0, 1)` with 53 bits of precision.
pub fn uniform_f64<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
