//! Reproducible random streams.
//!
//! Every randomized step (uniform interleaving, random synthetic addresses)
//! draws from xoshiro256++ seeded through SplitMix64 (`seed_from_u64`). Both
//! generators are fixed published algorithms, so a seed yields the same
//! stream on every platform and toolchain. Bounded draws use Lemire's
//! multiply-shift with rejection, which is exact and does not depend on any
//! distribution code outside this file.

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Debug, Clone)]
pub struct DetRng(Xoshiro256PlusPlus);

impl DetRng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform integer in `0..bound`. `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(bound);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }
}
