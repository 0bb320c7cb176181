//! Seeded random number generation.
//!
//! Version 1 of the generator is normative for every file this crate writes:
//!
//! * bit source: ChaCha8 seeded through `SeedableRng::seed_from_u64(seed)`;
//! * uniforms: `next_u64() >> 11` scaled by `2^-53`, giving values in `[0, 1)`;
//! * Gaussians: Box–Muller on consecutive uniform pairs `(u1, u2)` with
//!   `r = sqrt(-2 ln(1 - u1))`, emitting `r cos(2 pi u2)` then `r sin(2 pi u2)`.
//!   A spare value left over after an odd-length request is discarded.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::Result;
use crate::tensor::{Dims, LatentTensor};

pub const RNG_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child generator whose stream depends only on this seed and `stream`.
    pub fn derive(&self, stream: u64) -> Rng {
        let mixed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .rotate_left(17)
            ^ stream.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        Rng::new(mixed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    fn gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Fills `out` with standard normal draws in order.
    pub fn fill_gaussian(&mut self, out: &mut [f32]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.gaussian_pair();
            pair[0] = a as f32;
            pair[1] = b as f32;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.gaussian_pair().0 as f32;
        }
    }
}

/// i.i.d. standard normal tensor, drawn in storage order.
pub fn random_gaussian(dims: Dims, rng: &mut Rng) -> Result<LatentTensor> {
    let dims = Dims::new(dims.w, dims.h, dims.l, dims.c)?;
    let mut data = vec![0.0f32; dims.len()];
    rng.fill_gaussian(&mut data);
    LatentTensor::from_vec(dims, data)
}
