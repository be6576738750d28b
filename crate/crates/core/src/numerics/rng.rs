//! Seedable random number generation.
//!
//! Every stochastic operation draws from [`Rng`], a thin wrapper over
//! xoshiro256++ (Blackman & Vigna) seeded through SplitMix64. The stream is
//! fully determined by the 64-bit seed and the call sequence, independent of
//! platform. Named sub-streams are derived with [`Rng::derive`] so that, for
//! example, the policy sampler and a noisy reward source never share state.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

/// SplitMix64 finalizer; used for seed derivation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Child seed for the named stream. Pure function of `(seed, label)`.
    pub fn derive_seed(seed: u64, label: &str) -> u64 {
        splitmix64(seed ^ splitmix64(label_hash(label)))
    }

    /// Independent generator for the named stream of `seed`.
    pub fn derive(seed: u64, label: &str) -> Self {
        Self::new(Self::derive_seed(seed, label))
    }

    /// Sub-stream of this generator's seed (does not advance `self`).
    pub fn fork(&self, label: &str) -> Self {
        Self::derive(self.seed, label)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform in `[low, high)`.
    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Draws an index from a discrete distribution given by `probs`.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform() * probs.iter().sum::<f64>();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    /// `count` distinct values from `pool`, in draw order.
    pub fn sample_distinct(&mut self, pool: &[usize], count: usize) -> Vec<usize> {
        let mut pool = pool.to_vec();
        let count = count.min(pool.len());
        // partial Fisher-Yates
        for i in 0..count {
            let j = i + self.below(pool.len() - i);
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.normal().to_bits(), b.normal().to_bits());
    }

    #[test]
    fn derived_streams_differ() {
        assert_ne!(Rng::derive_seed(1, "policy"), Rng::derive_seed(1, "reward"));
        assert_ne!(Rng::derive_seed(1, "policy"), Rng::derive_seed(2, "policy"));
        assert_eq!(Rng::derive_seed(3, "x"), Rng::derive_seed(3, "x"));
    }

    #[test]
    fn sample_distinct_has_no_repeats() {
        let mut rng = Rng::new(11);
        for _ in 0..200 {
            let s = rng.sample_distinct(&[0, 1, 2, 4, 5], 3);
            assert_eq!(s.len(), 3);
            assert!(s[0] != s[1] && s[1] != s[2] && s[0] != s[2]);
            assert!(s.iter().all(|v| *v != 3));
        }
    }

    #[test]
    fn categorical_respects_zero_mass() {
        let mut rng = Rng::new(5);
        for _ in 0..1000 {
            assert_ne!(rng.categorical(&[0.5, 0.0, 0.5]), 1);
        }
    }
}
