//! Deterministic random stream.
//!
//! xoshiro256++ seeded through splitmix64. All floating-point paths go
//! through `libm`, so the stream is identical across platforms and builds.

use alloc::vec::Vec;

use core::f64::consts::TAU;

/// Seeded pseudo-random generator used for parameter init, shuffling,
/// dropout masks, and synthetic corpus generation.
#[derive(Debug, Clone)]
pub struct SeededRng {
    state: [u64; 4],
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        // splitmix64 expansion of the seed into the full state.
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = s;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^ (z >> 31)
        };
        let state = [next(), next(), next(), next()];
        SeededRng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, bound). `bound` must be nonzero.
    pub fn below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        (self.next_u64() % bound as u64) as usize
    }

    /// One draw from N(mean, std^2) via Box-Muller.
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let mut u1 = self.uniform();
        if u1 < 1e-300 {
            u1 = 1e-300;
        }
        let u2 = self.uniform();
        let mag = libm::sqrt(-2.0 * libm::log(u1));
        mean + std * mag * libm::cos(TAU * u2)
    }

    pub fn fill_normal(&mut self, out: &mut [f64], mean: f64, std: f64) {
        for v in out.iter_mut() {
            *v = self.normal(mean, std);
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Inverted dropout mask: each entry is 0 with probability `p`,
    /// otherwise 1/(1-p).
    pub fn dropout_mask(&mut self, len: usize, p: f64) -> Vec<f64> {
        let keep = 1.0 / (1.0 - p);
        (0..len)
            .map(|_| if self.uniform() < p { 0.0 } else { keep })
            .collect()
    }
}
