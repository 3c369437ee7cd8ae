//! Counter-derived random streams.
//!
//! Every random draw in the planner comes from a stream keyed by
//! `(seed, purpose, indices...)`, so the result of a draw never depends on
//! which thread made it or in which order candidates were evaluated.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for. Part of the derivation key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    Propose = 1,
    Evaluate = 2,
    Advance = 3,
    Override = 4,
    Estimate = 5,
    Build = 6,
    Trial = 7,
}

#[derive(Debug, Clone)]
pub struct RandomStream(ChaCha8Rng);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn from_seed(seed: u64) -> Self {
        RandomStream(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn derive(seed: u64, purpose: StreamPurpose, indices: &[u64]) -> Self {
        let mut state = splitmix64(seed ^ 0x6a09_e667_f3bc_c908);
        state = splitmix64(state ^ purpose as u64);
        for (k, idx) in indices.iter().enumerate() {
            state = splitmix64(state ^ idx.wrapping_mul(0x9e37_79b9).wrapping_add(k as u64 + 1));
        }
        let mut key = [0u8; 32];
        for (k, chunk) in key.chunks_exact_mut(8).enumerate() {
            state = splitmix64(state.wrapping_add(k as u64));
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        RandomStream(ChaCha8Rng::from_seed(key))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    /// Draws an index from unnormalized non-negative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0, "categorical weights must have positive mass");
        let target = self.uniform() * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                acc += w;
                last_positive = i;
                if target < acc {
                    return i;
                }
            }
        }
        // round-off: target landed past the accumulated mass
        last_positive
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
