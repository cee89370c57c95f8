//! Seeded random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Deterministic random stream.
///
/// Backed by the ChaCha8 counter-mode generator; the 64-bit seed is expanded
/// with `SeedableRng::seed_from_u64`. The same seed yields the same draw
/// sequence on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// An independent child stream; advances this stream by one draw.
    pub fn fork(&mut self) -> RngStream {
        let child = self.inner.random::<u64>();
        RngStream::new(child ^ 0x9E37_79B9_7F4A_7C15)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_range(&mut self, lo: i64, hi: i64) -> i64 {
        self.inner.random_range(lo..=hi)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, uniformly. Uses Floyd's algorithm
    /// when `k` is small relative to `n`, a partial Fisher-Yates otherwise.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct items from {n}");
        if k * 8 < n {
            let mut picked: Vec<usize> = Vec::with_capacity(k);
            for j in n - k..n {
                let t = self.index(j + 1);
                picked.push(if picked.contains(&t) { j } else { t });
            }
            return picked;
        }
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.counter(), b.counter());
        assert_ne!(RngStream::new(8).next_u64(), RngStream::new(7).next_u64());
    }

    #[test]
    fn distinct_draws_are_distinct() {
        let mut r = RngStream::new(1);
        let mut d = r.sample_without_replacement(20, 20);
        d.sort_unstable();
        assert_eq!(d, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn sparse_draws_are_distinct_and_cover_the_range() {
        let mut r = RngStream::new(2);
        let mut seen = vec![0usize; 1000];
        for _ in 0..2000 {
            let mut d = r.sample_without_replacement(1000, 32);
            d.iter().for_each(|&i| seen[i] += 1);
            d.sort_unstable();
            d.dedup();
            assert_eq!(d.len(), 32);
        }
        // expected 64 hits per index
        assert!(seen.iter().all(|&c| c > 25 && c < 120));
    }
}
