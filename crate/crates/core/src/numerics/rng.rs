//! Seeded random streams.
//!
//! Every stream is a ChaCha20 generator (256-bit key, 64-bit stream id).
//! The key is expanded from the 64-bit seed; labeled substreams select a
//! distinct stream id so independent consumers never share draws.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha20Rng,
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { inner: ChaCha20Rng::seed_from_u64(seed) }
    }

    /// Independent stream for a named consumer (e.g. "data", "itc-split").
    pub fn substream(seed: u64, label: &str) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(fnv1a(label));
        Self { inner }
    }

    /// Independent stream for a parallel worker.
    pub fn worker(seed: u64, worker_id: u64) -> Self {
        Self::substream(seed, &format!("worker-{worker_id}"))
    }

    /// A 64-bit seed derived from `(seed, label)`, for handing to other components.
    pub fn derive_seed(seed: u64, label: &str) -> u64 {
        Self::substream(seed, label).inner.next_u64()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.inner.random();
        lo + (hi - lo) * u
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}
