//! Seeded random streams.
//!
//! All randomness (weight initialization, extractor weights, data sampling,
//! test inputs) comes from SplitMix64 (Steele, Lea & Flood 2014): state
//! advances by `0x9E3779B97F4A7C15`, output is the state passed through the
//! `(30, 27, 31)` xor-shift/multiply finalizer. Uniform floats take the top
//! 53 bits: `(next_u64() >> 11) * 2^-53`.

use rand::RngCore;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::SplitMix64;

pub type Stream = SplitMix64;

pub fn stream(seed: u64) -> Stream {
    SplitMix64::seed_from_u64(seed)
}

/// Uniform in `[0, 1)`.
pub fn unit(rng: &mut Stream) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[lo, hi)`.
pub fn uniform(rng: &mut Stream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

/// Uniform integer in `0..n` (`n > 0`), by rejection to avoid modulo bias.
pub fn index(rng: &mut Stream, n: usize) -> usize {
    assert!(n > 0, "index() over empty range");
    let n = n as u64;
    let zone = u64::MAX - u64::MAX % n;
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % n) as usize;
        }
    }
}

pub fn uniform_vec(rng: &mut Stream, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| uniform(rng, lo, hi)).collect()
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut Stream, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, index(rng, i + 1));
    }
    p
}
