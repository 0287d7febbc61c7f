//! Acquisition: the modified UCB score over posterior samples, its exhaustive
//! maximization, and the probabilistic reparameterization maximized by
//! REINFORCE stochastic gradient ascent.

use std::io::Write;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax, CompensatedSum};
use crate::posterior::PosteriorSampleSet;
use crate::surrogate::Surrogate;

/// `t ↦ β_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSchedule {
    /// `√(2 ln t)`, zero for `t ≤ 1`.
    SqrtTwoLog,
    Constant { value: f64 },
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule::SqrtTwoLog
    }
}

impl BetaSchedule {
    pub fn at(&self, t: u64) -> f64 {
        match *self {
            BetaSchedule::SqrtTwoLog => {
                if t <= 1 {
                    0.0
                } else {
                    (2.0 * (t as f64).ln()).sqrt()
                }
            }
            BetaSchedule::Constant { value } => value,
        }
    }
}

/// `r ↦ γ(r)`, the bonus for rarely evaluated candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaFn {
    /// `scale · r^{-1/2}` with `γ(0) = 2 · scale`.
    InverseSqrt { scale: f64 },
    Constant { value: f64 },
}

impl Default for GammaFn {
    fn default() -> Self {
        GammaFn::InverseSqrt { scale: 2.0 }
    }
}

impl GammaFn {
    pub fn zero() -> Self {
        GammaFn::Constant { value: 0.0 }
    }

    pub fn at(&self, r: u64) -> f64 {
        match *self {
            GammaFn::InverseSqrt { scale } => {
                if r == 0 {
                    2.0 * scale
                } else {
                    scale / (r as f64).sqrt()
                }
            }
            GammaFn::Constant { value } => value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    #[serde(default)]
    pub beta: BetaSchedule,
    #[serde(default)]
    pub gamma: GammaFn,
    /// Posterior samples drawn per round.
    #[serde(default = "default_k")]
    pub samples: usize,
}

fn default_k() -> usize {
    100
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            beta: BetaSchedule::default(),
            gamma: GammaFn::default(),
            samples: default_k(),
        }
    }
}

/// Sample mean and standard deviation of `f(z_n; Ŵ_k)` over `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateStats {
    pub mean: f64,
    pub std: f64,
}

/// Mean and `K - 1` denominator standard deviation.
pub fn sample_stats(values: &[f64]) -> Result<CandidateStats> {
    let k = values.len();
    if k < 2 {
        return Err(Error::InsufficientData(format!("need K >= 2 samples, got {k}")));
    }
    let mean = values.iter().copied().collect::<CompensatedSum>().value() / k as f64;
    let ss = values
        .iter()
        .map(|v| (v - mean).powi(2))
        .collect::<CompensatedSum>()
        .value();
    Ok(CandidateStats {
        mean,
        std: (ss / (k as f64 - 1.0)).sqrt(),
    })
}

pub fn candidate_stats(
    surrogate: &Surrogate,
    samples: &PosteriorSampleSet,
    n: usize,
) -> Result<CandidateStats> {
    let z = surrogate
        .inputs()
        .get(n)
        .ok_or(Error::IndexOutOfRange { index: n, len: surrogate.len() })?;
    let values = samples
        .samples
        .iter()
        .map(|w| surrogate.spec().forward(w, z))
        .collect::<Result<Vec<_>>>()?;
    sample_stats(&values)
}

/// Stats for every candidate from one batched prediction.
pub fn all_candidate_stats(
    surrogate: &Surrogate,
    samples: &PosteriorSampleSet,
) -> Result<Vec<CandidateStats>> {
    let pred: DMatrix<f64> = surrogate.predict_samples(&samples.samples)?;
    (0..pred.nrows())
        .map(|n| sample_stats(pred.row(n).transpose().as_slice()))
        .collect()
}

/// `μ + β (σ + γ)`.
pub fn mucb(mean: f64, std: f64, beta: f64, gamma: f64) -> f64 {
    mean + beta * (std + gamma)
}

/// `α_t(z_n)` for every candidate at round `t` (total observations so far).
pub fn mucb_values(
    stats: &[CandidateStats],
    counts: &[u64],
    cfg: &AcquisitionConfig,
    t: u64,
) -> Result<Vec<f64>> {
    if stats.len() != counts.len() {
        return Err(Error::dims(stats.len(), counts.len(), "evaluation counts"));
    }
    let beta = cfg.beta.at(t);
    Ok(stats
        .iter()
        .zip(counts)
        .map(|(s, &r)| mucb(s.mean, s.std, beta, cfg.gamma.at(r)))
        .collect())
}

/// Lowest-index maximizer of `α_t`.
pub fn argmax_mucb(
    stats: &[CandidateStats],
    counts: &[u64],
    cfg: &AcquisitionConfig,
    t: u64,
) -> Result<usize> {
    let alpha = mucb_values(stats, counts, cfg, t)?;
    argmax(&alpha).ok_or_else(|| Error::InsufficientData("no candidates".into()))
}

pub const DEFAULT_THETA_FLOOR: f64 = 1e-6;

/// `θ ∈ [δ, 1]^N` defining `p(z_i; θ) = θ_i / Σ_j θ_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrState {
    theta: Vec<f64>,
    floor: f64,
}

impl PrState {
    /// Clips `theta` into `[floor, 1]`.
    pub fn new(theta: Vec<f64>, floor: f64) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InsufficientData("θ must have at least one entry".into()));
        }
        if !(floor > 0.0 && floor <= 1.0) {
            return Err(Error::InvalidConfig(format!("θ floor must lie in (0, 1], got {floor}")));
        }
        if theta.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("θ".into()));
        }
        let theta = theta.into_iter().map(|v| v.clamp(floor, 1.0)).collect();
        Ok(PrState { theta, floor })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n], DEFAULT_THETA_FLOOR)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn total(&self) -> f64 {
        self.theta.iter().sum()
    }

    fn step(&mut self, direction: &[f64], lr: f64) {
        for (t, d) in self.theta.iter_mut().zip(direction) {
            *t = (*t + lr * d).clamp(self.floor, 1.0);
        }
    }
}

pub fn pr_prob(state: &PrState) -> Vec<f64> {
    let total = state.total();
    state.theta.iter().map(|t| t / total).collect()
}

/// `α̃(θ) = Σ_i p_i(θ) α_i`.
pub fn pr_value(state: &PrState, alpha: &[f64]) -> Result<f64> {
    if alpha.len() != state.len() {
        return Err(Error::dims(state.len(), alpha.len(), "acquisition values"));
    }
    Ok(pr_prob(state).iter().zip(alpha).map(|(p, a)| p * a).sum())
}

/// Exact gradient of `α̃`: `(α_j - α̃) / Σθ`.
pub fn pr_exact_gradient(state: &PrState, alpha: &[f64]) -> Result<Vec<f64>> {
    let value = pr_value(state, alpha)?;
    let total = state.total();
    Ok(alpha.iter().map(|a| (a - value) / total).collect())
}

pub fn pr_sample_candidate<R: Rng + ?Sized>(state: &PrState, rng: &mut R) -> usize {
    WeightedIndex::new(&state.theta)
        .expect("θ entries are positive")
        .sample(rng)
}

/// `∇_θ log p(z_i; θ)`: `1/θ_i` at `i` and `-1/Σθ` everywhere.
fn add_score(grad: &mut [f64], state: &PrState, i: usize, weight: f64, inv_total: f64) {
    for g in grad.iter_mut() {
        *g -= weight * inv_total;
    }
    grad[i] += weight / state.theta[i];
}

/// REINFORCE estimate `(1/I) Σ α(ẑ_i) ∇_θ log p(ẑ_i; θ)` with `ẑ_i ~ p(·; θ)`.
pub fn pr_gradient_estimate<R: Rng + ?Sized>(
    state: &PrState,
    alpha: &[f64],
    draws: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if draws < 1 {
        return Err(Error::InvalidConfig("gradient estimate needs I >= 1".into()));
    }
    if alpha.len() != state.len() {
        return Err(Error::dims(state.len(), alpha.len(), "acquisition values"));
    }
    let dist = WeightedIndex::new(&state.theta).expect("θ entries are positive");
    let inv_total = 1.0 / state.total();
    let mut grad = vec![0.0; state.len()];
    for _ in 0..draws {
        let i = dist.sample(rng);
        add_score(&mut grad, state, i, alpha[i], inv_total);
    }
    for g in &mut grad {
        *g /= draws as f64;
    }
    Ok(grad)
}

/// Multi-start projected stochastic gradient ascent on `α̃(θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrConfig {
    pub starts: usize,
    pub iterations: usize,
    /// `ℓ_t = learning_rate / √t`.
    pub learning_rate: f64,
    /// Draws `I` per gradient estimate.
    pub draws: usize,
    pub floor: f64,
    /// Subtract the leave-one-out mean of the batch from each `α(ẑ_i)`.
    pub baseline: bool,
    /// Divide the batch gradient by the batch standard deviation of `α`.
    pub normalize: bool,
}

impl Default for PrConfig {
    fn default() -> Self {
        PrConfig {
            starts: 8,
            iterations: 300,
            learning_rate: 0.5,
            draws: 64,
            floor: DEFAULT_THETA_FLOOR,
            baseline: true,
            normalize: true,
        }
    }
}

/// Result of one optimization: the chosen `θ*` and the per-start score used
/// to pick it.
#[derive(Debug, Clone, PartialEq)]
pub struct PrOptimum {
    pub state: PrState,
    pub start: usize,
    /// `Σ_i α(ẑ_i)` over the final iteration's draws, per start.
    pub final_scores: Vec<f64>,
}

pub fn pr_sga_optimize<R: Rng + ?Sized>(alpha: &[f64], cfg: &PrConfig, rng: &mut R) -> Result<PrOptimum> {
    let n = alpha.len();
    if n == 0 {
        return Err(Error::InsufficientData("no candidates".into()));
    }
    if cfg.starts == 0 || cfg.iterations == 0 || cfg.draws == 0 {
        return Err(Error::InvalidConfig("starts, iterations and draws must be >= 1".into()));
    }
    if cfg.baseline && cfg.draws < 2 {
        return Err(Error::InvalidConfig("a leave-one-out baseline needs I >= 2".into()));
    }
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("acquisition value".into()));
    }
    let mut best: Option<(f64, usize, PrState)> = None;
    let mut final_scores = Vec::with_capacity(cfg.starts);
    let mut picks = vec![0usize; cfg.draws];
    let mut grad = vec![0.0; n];
    for start in 0..cfg.starts {
        let init: Vec<f64> = (0..n).map(|_| rng.random_range(cfg.floor..=1.0)).collect();
        let mut state = PrState::new(init, cfg.floor)?;
        let mut score = 0.0;
        for it in 1..=cfg.iterations {
            let dist = WeightedIndex::new(&state.theta).expect("θ entries are positive");
            for p in picks.iter_mut() {
                *p = dist.sample(rng);
            }
            let sum: f64 = picks.iter().map(|&i| alpha[i]).sum();
            score = sum;
            // A batch of one repeated candidate has zero centered gradient;
            // skipping it keeps rounding noise out of the normalized step.
            if cfg.baseline && picks.iter().all(|&i| alpha[i] == alpha[picks[0]]) {
                continue;
            }
            let m = cfg.draws as f64;
            let inv_total = 1.0 / state.total();
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in &picks {
                let weight = if cfg.baseline {
                    alpha[i] - (sum - alpha[i]) / (m - 1.0)
                } else {
                    alpha[i]
                };
                add_score(&mut grad, &state, i, weight / m, inv_total);
            }
            if cfg.normalize {
                let mean = sum / m;
                let sd = (picks.iter().map(|&i| (alpha[i] - mean).powi(2)).sum::<f64>() / m).sqrt();
                if sd > 0.0 {
                    grad.iter_mut().for_each(|g| *g /= sd);
                }
            }
            state.step(&grad, cfg.learning_rate / (it as f64).sqrt());
        }
        final_scores.push(score);
        if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
            best = Some((score, start, state));
        }
    }
    let (_, start, state) = best.expect("at least one start");
    Ok(PrOptimum {
        state,
        start,
        final_scores,
    })
}

/// One row of the acquisition trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRecord {
    pub round: u64,
    pub candidate: usize,
    pub beta: f64,
    pub alpha_chosen: f64,
    pub alpha_max: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn write_acquisition_csv<W: Write>(records: &[AcquisitionRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
