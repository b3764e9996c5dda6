//! Weighted random sampling of an output port, proportional to VOQ lengths.
//!
//! A Fenwick (binary-indexed) tree over the weight vector gives O(log N)
//! sampling and O(log N) point updates. A naive linear-scan sampler with the
//! same interface lives in the tests as an oracle; both consume one uniform
//! draw in `[0, total)` per sample, so they are draw-for-draw identical.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ProportionalSampler {
    n: usize,
    // tree[k] holds the sum of a block of weights, classic Fenwick layout (1-based)
    tree: Vec<u64>,
    weights: Vec<u64>,
    total: u64,
}

impl ProportionalSampler {
    pub fn new(weights: &[u64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0u64; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            let mut k = i + 1;
            while k <= n {
                tree[k] += w;
                k += k & k.wrapping_neg();
            }
        }
        ProportionalSampler {
            n,
            tree,
            weights: weights.to_vec(),
            total: weights.iter().sum(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn total(&self) -> u64 {
        self.total
    }

    #[inline]
    pub fn weight(&self, index: usize) -> u64 {
        self.weights[index]
    }

    pub fn update(&mut self, index: usize, new_weight: u64) -> Result<()> {
        if index >= self.n {
            return Err(Error::IndexOutOfRange {
                i: index,
                j: 0,
                n: self.n,
            });
        }
        let old = self.weights[index];
        // signed delta in two's complement; Fenwick nodes stay consistent
        let delta = new_weight.wrapping_sub(old);
        let mut k = index + 1;
        while k <= self.n {
            self.tree[k] = self.tree[k].wrapping_add(delta);
            k += k & k.wrapping_neg();
        }
        self.total = self.total - old + new_weight;
        self.weights[index] = new_weight;
        Ok(())
    }

    /// Draws index j with probability weights[j]/total, or None when all
    /// weights are zero.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        if self.total == 0 {
            return None;
        }
        let u = rng.gen_range(0..self.total);
        Some(self.find(u))
    }

    /// First index whose cumulative weight exceeds `u` (0 <= u < total).
    fn find(&self, mut u: u64) -> usize {
        let mut pos = 0usize;
        let mut mask = self.n.next_power_of_two();
        while mask > 0 {
            let next = pos + mask;
            if next <= self.n && self.tree[next] <= u {
                u -= self.tree[next];
                pos = next;
            }
            mask >>= 1;
        }
        pos // 0-based: pos entries have cumulative sum <= u
    }

    /// Cumulative weight of indices 0..=index, exposed for exactness tests.
    pub fn prefix_sum(&self, index: usize) -> u64 {
        let mut k = index + 1;
        let mut s = 0u64;
        while k > 0 {
            s = s.wrapping_add(self.tree[k]);
            k -= k & k.wrapping_neg();
        }
        s
    }
}
