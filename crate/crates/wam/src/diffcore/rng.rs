//! Deterministic random sampling.
//!
//! The generator is xoshiro256** with its 256-bit state expanded from a
//! 64-bit seed by SplitMix64; normal variates come from Box-Muller over the
//! 53-bit uniform stream. Integer state transitions make every stream
//! identical across platforms, which the reproducibility suite relies on.

use super::tensor::{Scalar, Tensor};

#[inline]
fn splitmix64(x: &mut u64) -> u64 {
    *x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from a base seed, a stream tag, and an
/// index. Used to give demos, train steps, and eval episodes their own
/// reproducible streams regardless of scheduling.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut x = base;
    let mut out = splitmix64(&mut x);
    for b in tag.bytes() {
        x ^= u64::from(b).wrapping_mul(0x100_0000_01B3);
        out = splitmix64(&mut x);
    }
    x ^= index;
    out ^ splitmix64(&mut x)
}

#[inline]
fn rotl(x: u64, k: u32) -> u64 {
    x.rotate_left(k)
}

/// xoshiro256** generator.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn seed_from(seed: u64) -> Self {
        let mut x = seed;
        Self {
            s: [
                splitmix64(&mut x),
                splitmix64(&mut x),
                splitmix64(&mut x),
                splitmix64(&mut x),
            ],
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = rotl(self.s[1].wrapping_mul(5), 7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = rotl(self.s[3], 45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform01()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.uniform01() * n as f64) as usize % n
    }

    /// One Box-Muller pair of standard normals. `u1` is mapped into `(0, 1]`
    /// so the log never sees zero.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform01();
        let u2 = self.uniform01();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Tensor of i.i.d. standard normals. Each call consumes whole
    /// Box-Muller pairs; an odd trailing element discards its partner.
    pub fn normal_tensor<E: Scalar>(&mut self, shape: Vec<usize>) -> Tensor<E> {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let (a, b) = self.normal_pair();
            data.push(E::from_f64(a).unwrap());
            if data.len() < n {
                data.push(E::from_f64(b).unwrap());
            }
        }
        Tensor::new(shape, data)
    }
}
