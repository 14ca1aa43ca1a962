//! Seeded, splittable random streams.
//!
//! A [`Stream`] is a ChaCha8 keystream addressed by a 64-bit key. Child streams are
//! derived from the parent *key* and a child index only, never from how many draws the
//! parent has made, so a tree of streams (run -> cell -> round -> prompt) produces the same
//! numbers no matter which order, or on which thread, the leaves are consumed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug)]
pub struct Stream {
    key: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self::from_key(splitmix64(seed))
    }

    fn from_key(key: u64) -> Self {
        let mut seed = [0u8; 32];
        let mut z = key;
        for chunk in seed.chunks_exact_mut(8) {
            z = splitmix64(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        Self {
            key,
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    /// Independent child stream number `index`.
    pub fn split(&self, index: u64) -> Stream {
        Self::from_key(splitmix64(self.key ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    /// Child stream addressed by a path of indices, e.g. `[k, seed, round]`.
    pub fn split_path(&self, path: &[u64]) -> Stream {
        path.iter().fold(self.clone(), |s, &i| s.split(i))
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Uniform on `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Index drawn from a probability vector. Falls back to the last non-zero entry when the
    /// accumulated mass stops just short of 1 through rounding.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                last = i;
                acc += p;
                if u < acc {
                    return i;
                }
            }
        }
        last
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = Stream::new(7);
        let mut b = Stream::new(7);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn split_ignores_parent_consumption() {
        let parent = Stream::new(11);
        let mut used = parent.clone();
        for _ in 0..17 {
            used.uniform();
        }
        let mut c1 = parent.split(3);
        let mut c2 = used.split(3);
        assert_eq!(c1.next_u64(), c2.next_u64());
    }

    #[test]
    fn children_differ() {
        let parent = Stream::new(1);
        let a = parent.split(0).next_u64_once();
        let b = parent.split(1).next_u64_once();
        assert_ne!(a, b);
        assert_ne!(parent.split_path(&[1, 2]).key(), parent.split_path(&[2, 1]).key());
    }

    impl Stream {
        fn next_u64_once(mut self) -> u64 {
            self.next_u64()
        }
    }

    #[test]
    fn categorical_hits_only_support() {
        let mut s = Stream::new(5);
        let p = [0.0, 0.25, 0.0, 0.75];
        let mut counts = [0usize; 4];
        for _ in 0..20_000 {
            counts[s.categorical(&p)] += 1;
        }
        assert_eq!(counts[0], 0);
        assert_eq!(counts[2], 0);
        let frac = counts[3] as f64 / 20_000.0;
        assert!((frac - 0.75).abs() < 0.015, "{frac}");
    }
}
