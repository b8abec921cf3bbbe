//! Seeded random streams.
//!
//! Every random draw in the toolkit goes through a [`RandomSource`]. A source is
//! a ChaCha8 generator addressed by `(seed, stream)`; forking derives a new
//! stream from the address alone, so forks never depend on how many values the
//! parent has already produced.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::qsim::Sign;

/// A seeded, forkable uniform generator.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self::at(seed, 0)
    }

    fn at(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream identified by `tag`.
    ///
    /// The child is a pure function of `(seed, stream, tag)`; draws already taken
    /// from `self` do not affect it.
    pub fn fork(&self, tag: u64) -> Self {
        Self::at(self.seed, mix64(self.stream ^ mix64(tag.wrapping_add(0x51_7c_c1_b7))))
    }

    /// Uniform real in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Fair random sign.
    pub fn sign(&mut self) -> Sign {
        if self.rng.random::<bool>() {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-trial seed derived from the experiment's master seed and the trial index.
pub fn derive_trial_seed(master_seed: u64, trial_index: u64) -> u64 {
    mix64(master_seed ^ mix64(trial_index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RandomSource::new(42);
        let mut b = RandomSource::new(42);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn fork_ignores_parent_consumption() {
        let parent = RandomSource::new(7);
        let mut used = parent.clone();
        for _ in 0..17 {
            used.uniform();
        }
        let mut f1 = parent.fork(3);
        let mut f2 = used.fork(3);
        assert_eq!(f1.uniform().to_bits(), f2.uniform().to_bits());
        let mut other = parent.fork(4);
        assert_ne!(parent.fork(3).uniform().to_bits(), other.uniform().to_bits());
    }

    #[test]
    fn trial_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_trial_seed(0, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(derive_trial_seed(0, 5), derive_trial_seed(1, 5));
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = RandomSource::new(1);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
