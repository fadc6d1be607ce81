//! Entity-scoped deterministic random streams.
//!
//! A stream is identified by the run seed plus a label such as
//! `"arrivals/main0"` or `"vehicle/17"`. The label is hashed with FNV-1a and
//! mixed with the seed through SplitMix64, then used to seed a ChaCha8
//! generator. ChaCha output is specified bit-for-bit, so the same
//! `(seed, label, draw index)` gives the same value on every platform.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    label: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let mixed = splitmix64(seed ^ splitmix64(fnv1a(label.as_bytes())));
        let mut key = [0u8; 32];
        let mut state = mixed;
        for chunk in key.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Self {
            seed,
            label,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Independent stream for a sub-entity, e.g. `stream.child("type")`.
    pub fn child(&self, label: &str) -> Self {
        Self::new(self.seed, format!("{}/{}", self.label, label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        // Always consume one draw so the stream position does not depend on p.
        let u = self.uniform();
        u < p.clamp(0.0, 1.0)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.sample(rand_distr::StandardNormal)
    }

    pub fn sample<T, D: rand_distr::Distribution<T>>(&mut self, dist: D) -> T {
        dist.sample(&mut self.rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}
