//! Deterministic splittable random number generation.
//!
//! Every random draw in this crate comes from [`SplitMix64`], seeded through
//! [`SplitMix64::stream`] from a `(master_seed, purpose_tag, index)` triple.
//! The generator is pinned so that emitted artifacts are bit-identical across
//! platforms and releases:
//!
//! - state advances by the 64-bit golden-ratio constant `0x9E3779B97F4A7C15`;
//! - each output is the SplitMix64 finalizer (`xor-shift 30/27/31` with
//!   multipliers `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB`) of the state;
//! - stream seeds are `mix(master_seed ^ mix(fnv1a(tag) ^ mix(index)))` where
//!   `mix` is the same finalizer and `fnv1a` is 64-bit FNV-1a over the tag
//!   bytes;
//! - `f64` draws in `[0, 1)` take the top 53 bits: `(x >> 11) * 2^-53`;
//! - bounded integer draws use the multiply-high reduction
//!   `(x * n) >> 64`, which is deterministic and unbiased to well below any
//!   tolerance used here for the small `n` this crate needs.

/// SplitMix64 finalizer; also used to mix stream seeds.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// 64-bit FNV-1a hash of a byte string.
#[inline]
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Counter-based SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    /// Generator seeded directly from a 64-bit value.
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derive an independent stream from `(master_seed, tag, index)`.
    ///
    /// Streams with distinct tags or indices are unrelated even when the
    /// master seed is shared.
    pub fn stream(master_seed: u64, tag: &str, index: u64) -> Self {
        let seed = mix64(master_seed ^ mix64(fnv1a64(tag.as_bytes()) ^ mix64(index)));
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` via multiply-high reduction. `n` must be
    /// nonzero.
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Uniform draw in `[lo, hi)`.
    #[inline]
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Bernoulli draw with success probability `p`.
    #[inline]
    pub fn next_bool(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Sample an index from an unnormalized nonnegative weight vector by
    /// inverse-CDF walk. Falls back to the last index on accumulated
    /// rounding.
    pub fn next_weighted(&mut self, weights: &[f64]) -> usize {
        debug_assert!(!weights.is_empty());
        let total: f64 = weights.iter().sum();
        let u = self.next_f64() * total;
        let mut acc = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.len() - 1
    }
}
