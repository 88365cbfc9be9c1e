//! Seed derivation and version-stable draws.
//!
//! Every per-entry stream is a ChaCha8 generator keyed by
//! `SHA-256(master_seed as u64 little-endian || key as UTF-8)`. Integer and
//! float draws are implemented here rather than through `rand`'s
//! distribution machinery so golden digests do not move when that crate
//! changes its sampling algorithms.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Independent, reproducible stream for `(master_seed, key)`.
pub fn derive_rng(master_seed: u64, key: &str) -> StreamRng {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Draw helpers with pinned algorithms.
pub trait Draw: RngCore {
    /// Uniform integer in `lo..=hi` (Lemire's multiply-shift with rejection).
    fn uniform_u64(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi, "empty range {lo}..={hi}");
        let span = hi - lo;
        if span == u64::MAX {
            return self.next_u64();
        }
        let range = span + 1;
        let threshold = range.wrapping_neg() % range;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(range);
            if (m as u64) >= threshold {
                return lo + (m >> 64) as u64;
            }
        }
    }

    fn uniform_usize(&mut self, lo: usize, hi: usize) -> usize {
        self.uniform_u64(lo as u64, hi as u64) as usize
    }

    /// Uniform `f64` in `[0, 1)` with 53 bits of precision.
    fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn uniform_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit_f64()
    }

    fn bernoulli(&mut self, p: f64) -> bool {
        self.unit_f64() < p
    }

    /// Standard normal via Box-Muller (one value per call).
    fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit_f64();
        let u2 = self.unit_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates shuffle.
    fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_usize(0, i);
            items.swap(i, j);
        }
    }
}

impl<R: RngCore + ?Sized> Draw for R {}
