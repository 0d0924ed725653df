//! Seeded pseudo-random generator: ChaCha8 streams, with child streams
//! derived from a seed plus integer keys so that parallel consumers (one per
//! epoch, batch or sample) draw independently of scheduling order.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{arg_err, Result};
use crate::tensor::Scalar;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std_dev: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent child stream keyed by `keys` (e.g. epoch and sample index).
    pub fn derive(seed: u64, keys: &[u64]) -> Self {
        let mut h = ChaCha8Rng::seed_from_u64(seed).next_u64();
        for &k in keys {
            h = ChaCha8Rng::seed_from_u64(h ^ k.wrapping_mul(GOLDEN_GAMMA)).next_u64();
        }
        Self::new(h)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n as u64) as usize
    }

    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.next_f64()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn normal(&mut self, mean: f64, std_dev: f64) -> f64 {
        let z: f64 = self.inner.sample(StandardNormal);
        mean + std_dev * z
    }

    pub fn draw(&mut self, dist: Distribution, n: usize) -> Result<Vec<f64>> {
        match dist {
            Distribution::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite()) || high < low {
                    return arg_err(format!("uniform({low}, {high}) is not a valid interval"));
                }
                Ok((0..n).map(|_| self.uniform(low, high)).collect())
            }
            Distribution::Normal { mean, std_dev } => {
                if !(mean.is_finite() && std_dev.is_finite()) || std_dev < 0.0 {
                    return arg_err(format!("normal({mean}, {std_dev}) has invalid parameters"));
                }
                Ok((0..n).map(|_| self.normal(mean, std_dev)).collect())
            }
        }
    }

    pub fn uniform_vec<T: Scalar>(&mut self, low: f64, high: f64, n: usize) -> Result<Vec<T>> {
        Ok(self
            .draw(Distribution::Uniform { low, high }, n)?
            .into_iter()
            .map(T::from_f64)
            .collect())
    }

    pub fn normal_vec<T: Scalar>(&mut self, mean: f64, std_dev: f64, n: usize) -> Result<Vec<T>> {
        Ok(self
            .draw(Distribution::Normal { mean, std_dev }, n)?
            .into_iter()
            .map(T::from_f64)
            .collect())
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn below_covers_range() {
        let mut r = Rng::new(11);
        let mut seen = [0usize; 7];
        for _ in 0..7000 {
            seen[r.below(7)] += 1;
        }
        assert!(seen.iter().all(|&c| (850..1150).contains(&c)), "{seen:?}");
    }

    #[test]
    fn degenerate_uniform_is_constant() {
        let v = Rng::new(3)
            .draw(
                Distribution::Uniform {
                    low: 0.0,
                    high: 0.0,
                },
                100,
            )
            .unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn same_seed_same_stream() {
        let a = Rng::new(7)
            .draw(
                Distribution::Normal {
                    mean: 0.0,
                    std_dev: 1.0,
                },
                50,
            )
            .unwrap();
        let b = Rng::new(7)
            .draw(
                Distribution::Normal {
                    mean: 0.0,
                    std_dev: 1.0,
                },
                50,
            )
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normal_sample_mean() {
        let v = Rng::new(2024)
            .draw(
                Distribution::Normal {
                    mean: 0.0,
                    std_dev: 1.0,
                },
                100_000,
            )
            .unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn invalid_parameters() {
        let mut r = Rng::new(1);
        assert!(r
            .draw(
                Distribution::Uniform {
                    low: 1.0,
                    high: 0.0
                },
                1
            )
            .is_err());
        assert!(r
            .draw(
                Distribution::Normal {
                    mean: 0.0,
                    std_dev: -1.0
                },
                1
            )
            .is_err());
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = Rng::derive(5, &[0, 1]);
        let mut b = Rng::derive(5, &[1, 0]);
        assert_ne!(a.next_u64(), b.next_u64());
        assert_eq!(Rng::derive(5, &[3, 9]), Rng::derive(5, &[3, 9]));
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut v: Vec<usize> = (0..100).collect();
        Rng::new(9).shuffle(&mut v);
        let mut s = v.clone();
        s.sort();
        assert_eq!(s, (0..100).collect::<Vec<_>>());
        assert_ne!(v, s);
    }
}
