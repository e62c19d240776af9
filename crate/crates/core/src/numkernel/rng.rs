//! Seeded randomness.
//!
//! [`Rng`] wraps a counter-based ChaCha20 generator. Sub-streams are derived
//! from the generator's key and a label, never from its position, so a
//! stream for "edge/step 17" is the same no matter what was drawn before.

use rand::distr::{Distribution, Open01};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Gamma, StandardNormal};
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Rng {
    key: [u8; 32],
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"prefnas-rng-root");
        hasher.update(seed.to_le_bytes());
        Self::from_key(hasher.finalize().into())
    }

    fn from_key(key: [u8; 32]) -> Self {
        Self {
            key,
            inner: ChaCha20Rng::from_seed(key),
        }
    }

    /// Independent stream named by `label`.
    pub fn substream(&self, label: &str) -> Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        Self::from_key(hasher.finalize().into())
    }

    /// Independent stream named by `label` and an index (step, node, ...).
    pub fn substream_at(&self, label: &str, index: u64) -> Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        hasher.update(index.to_le_bytes());
        Self::from_key(hasher.finalize().into())
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        Open01.sample(&mut self.inner)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal_tensor(&mut self, shape: &[usize], std: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = std * self.normal();
        }
        t
    }

    /// Standard Gumbel noise, `G = -log(-log U)` with `U ~ Unif(0, 1)`.
    pub fn sample_gumbel(&mut self, shape: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = gumbel_from_uniform(self.open01());
        }
        t
    }

    /// One draw from `Dirichlet(eta)`, normalized Gamma variates.
    pub fn sample_dirichlet(&mut self, eta: &[f64]) -> Result<Vec<f64>> {
        if eta.is_empty() {
            return Err(Error::invalid("dirichlet concentration is empty"));
        }
        if let Some(bad) = eta.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::invalid(format!("dirichlet concentration must be positive, got {bad}")));
        }
        let gammas: Vec<Gamma<f64>> = eta
            .iter()
            .map(|&a| Gamma::new(a, 1.0).map_err(|e| Error::invalid(e.to_string())))
            .collect::<Result<_>>()?;
        loop {
            let draws: Vec<f64> = gammas.iter().map(|g| g.sample(&mut self.inner)).collect();
            let total: f64 = draws.iter().sum();
            // All-underflow is possible for tiny concentrations; redraw.
            if total > 0.0 && total.is_finite() {
                return Ok(draws.into_iter().map(|d| d / total).collect());
            }
        }
    }
}

pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}
