use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Seeded random stream. Same seed and call sequence give the same draws.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    beta_draws: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            beta_draws: 0,
        }
    }

    /// Independent sub-stream keyed by a purpose tag and an arbitrary key
    /// (typically a session id).
    pub fn derive(seed: u64, purpose: &str, key: &str) -> Self {
        Rng::new(derive_seed(seed, purpose, key))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of Beta draws taken from this stream.
    pub fn beta_draws(&self) -> u64 {
        self.beta_draws
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on the open interval (0, 1).
    fn open_uniform(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Tensor with entries uniform in [-bound, bound).
    pub fn uniform_tensor(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| (2.0 * self.uniform() - 1.0) * bound).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// Tensor with entries normal(0, std).
    pub fn normal_tensor(&mut self, shape: &[usize], std: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.normal() * std).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    /// Gamma(shape, 1) by Marsaglia–Tsang, boosted for shape < 1.
    pub fn gamma(&mut self, shape: f64) -> Result<f64> {
        if !(shape.is_finite() && shape > 0.0) {
            return Err(Error::domain("sample_gamma", format!("shape must be positive, got {shape}")));
        }
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0)?;
            return Ok(g * self.open_uniform().powf(1.0 / shape));
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.open_uniform();
            if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
                return Ok(d * v);
            }
        }
    }

    /// One draw from Beta(a, b), kept strictly inside (0, 1).
    pub fn sample_beta(&mut self, a: f64, b: f64) -> Result<f64> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::domain(
                "sample_beta",
                format!("parameters must be positive, got a={a}, b={b}"),
            ));
        }
        self.beta_draws += 1;
        let g1 = self.gamma(a)?;
        let g2 = self.gamma(b)?;
        let x = if g1 + g2 > 0.0 { g1 / (g1 + g2) } else { 0.5 };
        Ok(x.clamp(1e-300, 1.0 - f64::EPSILON / 2.0))
    }
}

pub fn derive_seed(seed: u64, purpose: &str, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update([0u8]);
    h.update(key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}
