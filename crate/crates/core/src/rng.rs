//! Seeded random streams.
//!
//! Every stochastic choice in the crate draws from [`Rng`], a
//! xoshiro256++ generator whose state is expanded from a 64-bit seed with
//! splitmix64. Independent substreams are keyed by `(seed, domain, index)`
//! so scenes, epochs and augmentation steps never share state and can be
//! regenerated out of order.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: Xoshiro256PlusPlus::seed_from_u64(seed) }
    }

    /// A stream that depends only on `(seed, domain, index)`.
    pub fn substream(seed: u64, domain: u64, index: u64) -> Self {
        let mut mix = SplitMix64::seed_from_u64(seed);
        let a = mix.next_u64();
        let mut mix = SplitMix64::seed_from_u64(a ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let b = mix.next_u64();
        let mut mix = SplitMix64::seed_from_u64(b ^ index);
        Self::new(mix.next_u64())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        mean + std * z
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

/// Substream domains used across the crate.
pub mod domain {
    pub const SCENE: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const PROBE: u64 = 5;
}
