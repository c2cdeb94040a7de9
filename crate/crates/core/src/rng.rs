//! Deterministic random streams.
//!
//! Every random draw in this crate comes from xoshiro256++ seeded through
//! SplitMix64 (`Xoshiro256PlusPlus::seed_from_u64`). Unit-interval draws use
//! the top 53 bits of each output (`(u >> 11) * 2^-53`) and bounded integers
//! use the multiply-shift map `(u * n) >> 64`, so a plan can be reproduced by
//! any implementation of the same generator.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Golden-ratio increment used to derive independent sub-stream seeds.
const STREAM_INCREMENT: u64 = 0x9E37_79B9_7F4A_7C15;

pub struct Stream {
    inner: Xoshiro256PlusPlus,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self { inner: Xoshiro256PlusPlus::seed_from_u64(seed) }
    }

    /// Stream for sub-task `index` of a computation seeded with `seed`.
    pub fn substream(seed: u64, index: u64) -> Self {
        Self::new(seed ^ index.wrapping_add(1).wrapping_mul(STREAM_INCREMENT))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw from `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}
