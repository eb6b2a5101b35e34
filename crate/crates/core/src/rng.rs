//! Portable seeded randomness.
//!
//! Every stream is a Xoshiro256++ generator. A stream is identified by a
//! `(seed, label)` pair: the label is hashed with 64-bit FNV-1a, xor-ed into
//! the seed, and the result expanded to the 256-bit state by SplitMix64
//! (`Xoshiro256PlusPlus::seed_from_u64`). Uniform doubles take the top 53
//! bits of a draw; standard normals come from the Box–Muller transform with
//! the second variate of each pair cached for the next call.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::tensor::Tensor;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(label: &str) -> u64 {
    label
        .bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Seed for the stream named `label` under `seed`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    seed ^ fnv1a(label)
}

#[derive(Clone, Debug)]
pub struct Rng {
    inner: Xoshiro256PlusPlus,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent stream for a named component.
    pub fn derive(seed: u64, label: &str) -> Self {
        Rng::new(derive_seed(seed, label))
    }

    /// Child stream keyed by this generator's next output and `label`.
    pub fn fork(&mut self, label: &str) -> Self {
        let s = self.next_u64();
        Rng::derive(s, label)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Integer in [0, n) by the multiply-shift reduction.
    pub fn below(&mut self, n: usize) -> usize {
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping the logarithm finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.normal()).collect()
    }

    /// Tensor of i.i.d. standard normals.
    pub fn normal_tensor(&mut self, shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), self.normal_vec(len))
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
