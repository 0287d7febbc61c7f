//! Ground-truth oracles with a known mean function and Gaussian noise.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LatentOracle, Oracle};
use crate::error::{Error, OracleError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub center: Vec<f64>,
    pub height: f64,
    pub width: f64,
}

/// Named mean-score surfaces over a real vector space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Landscape {
    /// `w·x + b`
    Linear { weights: Vec<f64>, intercept: f64 },
    /// `height - curvature · ‖x - center‖²`
    QuadraticBowl {
        center: Vec<f64>,
        height: f64,
        curvature: f64,
    },
    /// Sum of Gaussian bumps `h · exp(-‖x - c‖² / (2 w²))`.
    MultiModal { peaks: Vec<Peak> },
}

impl Landscape {
    pub fn dim(&self) -> Option<usize> {
        match self {
            Landscape::Linear { weights, .. } => Some(weights.len()),
            Landscape::QuadraticBowl { center, .. } => Some(center.len()),
            Landscape::MultiModal { peaks } => peaks.first().map(|p| p.center.len()),
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        if let Some(d) = self.dim() {
            if d != x.len() {
                return Err(Error::dims(d, x.len(), "landscape input"));
            }
        }
        Ok(match self {
            Landscape::Linear { weights, intercept } => {
                weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + intercept
            }
            Landscape::QuadraticBowl {
                center,
                height,
                curvature,
            } => height - curvature * crate::linalg::squared_distance(x, center),
            Landscape::MultiModal { peaks } => peaks
                .iter()
                .map(|p| {
                    let d2 = crate::linalg::squared_distance(x, &p.center);
                    p.height * (-d2 / (2.0 * p.width * p.width)).exp()
                })
                .sum(),
        })
    }
}

/// Candidate-indexed oracle returning `v_n + N(0, σ_n²)`.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    means: Vec<f64>,
    noise_std: Vec<f64>,
    rng: ChaCha8Rng,
}

impl SyntheticOracle {
    pub fn new(means: Vec<f64>, noise_std: Vec<f64>, seed: u64) -> Result<Self> {
        if means.len() != noise_std.len() {
            return Err(Error::dims(means.len(), noise_std.len(), "noise std per candidate"));
        }
        if let Some(s) = noise_std.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::InvalidConfig(format!("noise std must be >= 0, got {s}")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("oracle mean".into()));
        }
        Ok(SyntheticOracle {
            means,
            noise_std,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn with_uniform_noise(means: Vec<f64>, noise_std: f64, seed: u64) -> Result<Self> {
        let n = means.len();
        Self::new(means, vec![noise_std; n], seed)
    }

    /// Evaluates `landscape` at every point to obtain the candidate means.
    pub fn from_landscape(
        landscape: &Landscape,
        points: &[DVector<f64>],
        noise_std: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        let means = points
            .iter()
            .map(|p| landscape.value(p.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(means, noise_std, seed)
    }

    pub fn true_mean(&self, n: usize) -> f64 {
        self.means[n]
    }

    pub fn true_means(&self) -> &[f64] {
        &self.means
    }

    pub fn noise_std(&self) -> &[f64] {
        &self.noise_std
    }

    /// One noisy draw at candidate `n`.
    pub fn synthetic_evaluate(&mut self, n: usize) -> Result<f64> {
        if n >= self.means.len() {
            return Err(Error::IndexOutOfRange {
                index: n,
                len: self.means.len(),
            });
        }
        let s = self.noise_std[n];
        if s == 0.0 {
            return Ok(self.means[n]);
        }
        let noise = Normal::new(0.0, s).expect("validated std");
        Ok(self.means[n] + noise.sample(&mut self.rng))
    }
}

impl Oracle for SyntheticOracle {
    fn num_candidates(&self) -> usize {
        self.means.len()
    }

    fn evaluate(&mut self, candidate: usize) -> Result<f64, OracleError> {
        self.synthetic_evaluate(candidate)
            .map_err(|e| OracleError::Other(e.to_string()))
    }
}

/// Latent-space oracle: `landscape(x) + N(0, noise_std²)`.
#[derive(Debug, Clone)]
pub struct SyntheticLatentOracle {
    landscape: Landscape,
    noise_std: f64,
    rng: ChaCha8Rng,
}

impl SyntheticLatentOracle {
    pub fn new(landscape: Landscape, noise_std: f64, seed: u64) -> Result<Self> {
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise std must be >= 0, got {noise_std}")));
        }
        Ok(SyntheticLatentOracle {
            landscape,
            noise_std,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn landscape(&self) -> &Landscape {
        &self.landscape
    }
}

impl LatentOracle for SyntheticLatentOracle {
    fn evaluate_latent(&mut self, x: &[f64]) -> Result<f64, OracleError> {
        let v = self
            .landscape
            .value(x)
            .map_err(|e| OracleError::Other(e.to_string()))?;
        if self.noise_std == 0.0 {
            return Ok(v);
        }
        let noise = Normal::new(0.0, self.noise_std).expect("validated std");
        Ok(v + noise.sample(&mut self.rng))
    }
}
