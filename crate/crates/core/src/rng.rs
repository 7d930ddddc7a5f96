//! Portable random stream used for every stochastic step in the pipeline.
//!
//! The generator is xoshiro256** seeded through SplitMix64 (the reference
//! seeding procedure published with xoshiro). Distributions are mapped from
//! raw 64-bit outputs with the fixed rules below, so any implementation that
//! follows them reproduces datasets bit for bit:
//!
//! - `uniform()`: `(next_u64() >> 11) as f64 * 2^-53`, in `[0, 1)`.
//! - `uniform_range(lo, hi)`: `lo + (hi - lo) * uniform()`.
//! - `int_inclusive(lo, hi)`: `lo + floor(uniform() * (hi - lo + 1))`, clamped to `hi`.
//! - `normal()`: Box-Muller on two uniforms `u1, u2`, returning
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`; the sine branch is discarded.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone)]
pub struct PortableRng {
    inner: Xoshiro256StarStar,
}

impl PortableRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Independent stream for one sample of a dataset.
    pub fn for_sample(base_seed: u64, sample_index: u64) -> Self {
        Self::new(base_seed ^ sample_index)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn int_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo + 1) as f64;
        (lo + (self.uniform() * span).floor() as u64).min(hi)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates shuffle driven by `int_inclusive`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.int_inclusive(0, i as u64) as usize;
            items.swap(i, j);
        }
    }
}
