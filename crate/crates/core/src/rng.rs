//! Seedable, splittable random streams.
//!
//! Every source of randomness in the crate is a [`RandomStream`]: a master
//! seed plus a path of integer tags identifying a sub-stream. Two streams
//! with different paths are statistically independent, and the output of a
//! stream depends only on its own `(seed, path)` pair, never on how many
//! other streams were consumed before it. This is what makes parallel
//! replications reproducible: each worker derives its own stream and the
//! result is identical to a sequential run.
//!
//! Internally the `(seed, path)` pair is folded into a 256-bit key for a
//! counter-mode ChaCha generator, so deriving a stream is cheap and the
//! streams never overlap.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer; a strong 64-bit mixing function.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A value-like handle on one reproducible random stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomStream {
    seed: u64,
    path: Vec<u64>,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream { seed, path: Vec::new() }
    }

    /// Derive the sub-stream identified by `tag`.
    pub fn child(&self, tag: u64) -> Self {
        let mut path = self.path.clone();
        path.push(tag);
        RandomStream { seed: self.seed, path }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fold `(seed, path)` into one 64-bit state.
    fn state(&self) -> u64 {
        let mut h = mix64(self.seed ^ GOLDEN);
        for &x in &self.path {
            h = mix64(h.wrapping_add(GOLDEN) ^ mix64(x.wrapping_add(GOLDEN)));
        }
        h
    }

    /// A 64-bit seed derived from this stream, for APIs that take a plain seed.
    pub fn derive_seed(&self) -> u64 {
        mix64(self.state().wrapping_add(GOLDEN))
    }

    /// Instantiate the keyed generator. Same stream, same generator.
    pub fn rng(&self) -> ChaCha12Rng {
        let h = self.state();
        let mut key = [0u8; 32];
        for i in 0..4 {
            let word = mix64(h.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1)));
            key[8 * i..8 * (i + 1)].copy_from_slice(&word.to_le_bytes());
        }
        ChaCha12Rng::from_seed(key)
    }

    /// `count` independent standard normal draws.
    pub fn gaussian(&self, count: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..count).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// `count` independent uniform draws on `[0, 1)`.
    pub fn uniforms(&self, count: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..count).map(|_| rng.random::<f64>()).collect()
    }

    /// One uniform draw on `[0, 1)`.
    pub fn uniform(&self) -> f64 {
        self.rng().random::<f64>()
    }

    /// `m` distinct indices drawn uniformly from `0..n`, in draw order.
    pub fn uniform_choice(&self, n: usize, m: usize) -> Result<Vec<usize>> {
        if m > n {
            return Err(Error::InvalidArgument(format!(
                "cannot draw {m} distinct indices from a pool of {n}"
            )));
        }
        // Partial Fisher-Yates: the first m slots are the draw.
        let mut pool: Vec<usize> = (0..n).collect();
        let mut rng = self.rng();
        for i in 0..m {
            let j = rng.random_range(i..n);
            pool.swap(i, j);
        }
        pool.truncate(m);
        Ok(pool)
    }

    /// A uniformly random permutation of `0..n`.
    pub fn shuffle(&self, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut self.rng());
        perm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_path_repeats() {
        let s = RandomStream::new(42).child(3).child(7);
        assert_eq!(s.gaussian(32), s.gaussian(32));
        assert_eq!(s.uniforms(32), s.uniforms(32));
        assert_eq!(s.shuffle(100), s.shuffle(100));
    }

    #[test]
    fn sibling_streams_do_not_interact() {
        let root = RandomStream::new(9);
        let a = root.child(0);
        let b = root.child(1);
        // Evaluate b first, then a; then the other order.
        let (b1, a1) = (b.gaussian(16), a.gaussian(16));
        let (a2, b2) = (a.gaussian(16), b.gaussian(16));
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_ne!(a1, b1);
    }

    #[test]
    fn distinct_paths_distinct_output() {
        let root = RandomStream::new(0);
        let x = root.child(1).child(0).uniforms(8);
        let y = root.child(1).child(1).uniforms(8);
        let z = root.child(2).uniforms(8);
        assert_ne!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn uniform_choice_exhaustive_is_permutation() {
        let s = RandomStream::new(5);
        let mut draw = s.uniform_choice(5, 5).unwrap();
        draw.sort_unstable();
        assert_eq!(draw, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn uniform_choice_rejects_oversized_draw() {
        let s = RandomStream::new(5);
        assert!(s.uniform_choice(4, 5).is_err());
    }

    #[test]
    fn gaussian_sample_mean_is_centered() {
        let n = 100_000;
        let draws = RandomStream::new(123).child(11).gaussian(n);
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean = {mean}");
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 0.02, "var = {var}");
    }
}
