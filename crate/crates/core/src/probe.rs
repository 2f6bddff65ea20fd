//! Linear read-out of sex from latent codes.
//!
//! Logistic regression on standardised features, fitted by full-batch
//! gradient descent with a small L2 penalty. It is deliberately simple so
//! its accuracy measures how linearly available sex is in a latent space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 500,
            learning_rate: 0.5,
            l2: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn check(x: &[f64], dim: usize, labels: &[usize]) -> Result<()> {
    if dim == 0 || x.len() != dim * labels.len() {
        return Err(Error::Shape(format!(
            "{} feature values for {} rows of width {dim}",
            x.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Parameter("probe labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Fits the probe to row-major features `x` (`labels.len()` rows of `dim`).
pub fn fit_probe(x: &[f64], dim: usize, labels: &[usize], cfg: &ProbeConfig) -> Result<LogisticProbe> {
    check(x, dim, labels)?;
    let n = labels.len();
    if n == 0 {
        return Err(Error::Parameter("probe needs training rows".into()));
    }
    let mut mean = vec![0.0; dim];
    for row in x.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let mut std = vec![0.0; dim];
    for row in x.chunks_exact(dim) {
        for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    for s in &mut std {
        *s = if s.sqrt() > 1e-12 { s.sqrt() } else { 1.0 };
    }
    let xs: Vec<f64> = x
        .chunks_exact(dim)
        .flat_map(|row| row.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut w: Vec<f64> = (0..dim).map(|_| init.sample(&mut rng)).collect();
    let mut b = 0.0;
    let mut gw = vec![0.0; dim];
    for _ in 0..cfg.epochs {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (row, &y) in xs.chunks_exact(dim).zip(labels) {
            let t = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let err = (sigmoid(t) - y as f64) / n as f64;
            gb += err;
            for (g, v) in gw.iter_mut().zip(row) {
                *g += err * v;
            }
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= cfg.learning_rate * (g + cfg.l2 * *wi);
        }
        b -= cfg.learning_rate * gb;
    }
    Ok(LogisticProbe { weights: w, bias: b, mean, std })
}

impl LogisticProbe {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Probability of class 1 for one row.
    pub fn prob(&self, row: &[f64]) -> f64 {
        let t = row
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .zip(&self.weights)
            .map(|(((v, m), s), w)| (v - m) / s * w)
            .sum::<f64>();
        sigmoid(self.bias + t)
    }

    pub fn accuracy(&self, x: &[f64], labels: &[usize]) -> Result<f64> {
        check(x, self.dim(), labels)?;
        if labels.is_empty() {
            return Err(Error::Parameter("accuracy of an empty set".into()));
        }
        let hits = x
            .chunks_exact(self.dim())
            .zip(labels)
            .filter(|(row, &y)| usize::from(self.prob(row) >= 0.5) == y)
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }
}
