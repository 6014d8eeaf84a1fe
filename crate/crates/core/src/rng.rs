//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a SHA-256 digest of a master
//! seed and a label path, e.g. `(master, n, trial)`. Two streams with
//! different paths never share state, and deriving a stream does not consume
//! anything from its parent, so results do not depend on scheduling order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::distributions::gaussian::std_normal_quantile;

/// 2^-52
const UNIT: f64 = 1.0 / 4_503_599_627_370_496.0;

fn derive_key(master: u64, path: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"fpp-lab/stream");
    hasher.update(master.to_le_bytes());
    for label in path {
        hasher.update(label.to_le_bytes());
    }
    hasher.finalize().into()
}

/// Maps 64 random bits to the open interval (0, 1): the midpoints of a
/// 2⁻⁵² grid, so neither endpoint is reachable.
#[inline]
pub fn open01(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * UNIT
}

/// A single-owner stream of random numbers.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::derive(seed, &[])
    }

    /// Stream for the label path `path` under `master`.
    pub fn derive(master: u64, path: &[u64]) -> Self {
        Self {
            inner: ChaCha8Rng::from_seed(derive_key(master, path)),
        }
    }

    /// A 64-bit seed for the label path, for APIs that take a plain seed.
    pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
        let key = derive_key(master, path);
        u64::from_le_bytes(key[..8].try_into().expect("digest has 32 bytes"))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw from (0, 1); never returns 0 or 1.
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        open01(self.inner.next_u64())
    }

    /// Standard normal draw by inverse transform.
    #[inline]
    pub fn next_gaussian(&mut self) -> f64 {
        std_normal_quantile(self.next_open01())
    }

    /// Uniform integer in `0..bound`.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        // Lemire's multiply-shift with rejection.
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = (self.inner.next_u64() as u128) * (bound as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }
}

/// Random-access source of 64-bit words: block `b` is the 32 words starting
/// at word position 64·b of a keyed ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct BlockSource {
    inner: ChaCha8Rng,
}

pub const BLOCK_WORDS: usize = 32;

impl BlockSource {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::from_seed(derive_key(seed, &[0x656e_7669_726f_6e6d])),
        }
    }

    pub fn fill_block(&mut self, block: u64, out: &mut [u64; BLOCK_WORDS]) {
        self.inner.set_word_pos((block as u128) * (2 * BLOCK_WORDS as u128));
        for slot in out.iter_mut() {
            *slot = self.inner.next_u64();
        }
    }
}
