//! The evaluation and selection stage: warm-up, the sequential M-UCB and
//! PR-M-UCB loops, and hyperparameter tuning against a stochastic-kriging
//! stand-in for the oracle.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    all_candidate_stats, mucb_values, pr_sample_candidate, pr_sga_optimize, write_acquisition_csv,
    AcquisitionConfig, AcquisitionRecord, BetaSchedule, GammaFn, PrConfig,
};
use crate::candidates::CandidateSet;
use crate::error::{Error, OracleError, Result};
use crate::ledger::ObservationLog;
use crate::linalg::{argmax, cholesky_with_jitter, median_squared_distance};
use crate::posterior::{PosteriorEngine, SamplerConfig, SamplerDiagnostics};
use crate::scoring::Oracle;
use crate::surrogate::{Surrogate, SurrogateConfig};

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-8;

/// Warm-up candidates: the ones derived from the initial example prompts
/// when recorded, otherwise `max(⌈0.05 N⌉, 2)` distinct uniform picks
/// (capped at `N`). Returned sorted.
pub fn choose_warmup_set<R: Rng + ?Sized>(candidates: &CandidateSet, rng: &mut R) -> Vec<usize> {
    let n = candidates.len();
    if !candidates.initial().is_empty() {
        let mut set = candidates.initial().to_vec();
        set.sort_unstable();
        set.dedup();
        return set;
    }
    let size = ((0.05 * n as f64).ceil() as usize).max(2).min(n);
    let mut set = rand::seq::index::sample(rng, n, size).into_vec();
    set.sort_unstable();
    set
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff_ms: 250,
            multiplier: 2.0,
        }
    }
}

/// Calls the oracle, retrying failed or non-finite responses with
/// exponential backoff. Failed attempts consume no budget.
pub fn evaluate_with_retry<O: Oracle + ?Sized>(
    oracle: &mut O,
    candidate: usize,
    policy: &RetryPolicy,
) -> Result<f64> {
    with_retry(policy, &format!("candidate {candidate}"), || oracle.evaluate(candidate))
}

pub(crate) fn with_retry<F>(policy: &RetryPolicy, what: &str, mut call: F) -> Result<f64>
where
    F: FnMut() -> std::result::Result<f64, OracleError>,
{
    let mut backoff = policy.initial_backoff_ms as f64;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let err = match call() {
            Ok(v) if v.is_finite() => return Ok(v),
            Ok(v) => OracleError::Other(format!("non-finite score {v}")),
            Err(e) => e,
        };
        if attempts > policy.max_retries {
            return Err(Error::Oracle { attempts, source: err });
        }
        log::warn!("oracle attempt {attempts} for {what} failed: {err}");
        if backoff > 0.0 {
            std::thread::sleep(Duration::from_millis(backoff as u64));
        }
        backoff *= policy.multiplier;
    }
}

/// `g*`: kriging interpolation of log observation variances, exponentiated
/// at prediction so it stays positive.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceModel {
    points: Vec<DVector<f64>>,
    weights: DVector<f64>,
    log_mean: f64,
    bandwidth: f64,
    floor: f64,
    constant: Option<f64>,
}

impl VarianceModel {
    pub fn constant(value: f64, floor: f64) -> Self {
        VarianceModel {
            points: Vec::new(),
            weights: DVector::zeros(0),
            log_mean: value.max(floor).ln(),
            bandwidth: 1.0,
            floor,
            constant: Some(value.max(floor)),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn predict(&self, z: &DVector<f64>) -> f64 {
        let mut log_v = self.log_mean;
        for (p, w) in self.points.iter().zip(self.weights.iter()) {
            log_v += w * rbf(p, z, self.bandwidth);
        }
        if let Some(v) = self.constant {
            return v;
        }
        log_v.exp().max(self.floor)
    }
}

fn rbf(a: &DVector<f64>, b: &DVector<f64>, bandwidth: f64) -> f64 {
    (-(a - b).norm_squared() / bandwidth).exp()
}

fn rbf_matrix(points: &[DVector<f64>], bandwidth: f64) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| rbf(&points[i], &points[j], bandwidth))
}

/// Fits `g*` to `(z_n, σ̂²_n)` pairs. Variances are raised to `floor`
/// before taking logs.
pub fn fit_variance_model(points: &[DVector<f64>], variances: &[f64], floor: f64) -> Result<VarianceModel> {
    if points.len() != variances.len() {
        return Err(Error::dims(points.len(), variances.len(), "variance observations"));
    }
    if points.is_empty() {
        return Err(Error::InsufficientData("variance model needs at least one point".into()));
    }
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::InvalidConfig(format!("variance floor must be > 0, got {floor}")));
    }
    if let Some(v) = variances.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("sample variance {v}")));
    }
    let floored: Vec<f64> = variances.iter().map(|v| v.max(floor)).collect();
    let all_same_point = points.iter().all(|p| p == &points[0]);
    if all_same_point {
        let mean = floored.iter().sum::<f64>() / floored.len() as f64;
        return Ok(VarianceModel::constant(mean, floor));
    }
    if floored.iter().all(|v| *v == floored[0]) {
        return Ok(VarianceModel::constant(floored[0], floor));
    }
    let y = DVector::from_iterator(floored.len(), floored.iter().map(|v| v.ln()));
    let bandwidth = median_squared_distance(points);
    let k = rbf_matrix(points, bandwidth);
    let ch = cholesky_with_jitter(&k, 1e-10)?;
    let ones = DVector::from_element(y.len(), 1.0);
    let k_inv_one = ch.solve(&ones);
    let log_mean = k_inv_one.dot(&y) / k_inv_one.sum();
    let weights = ch.solve(&(&y - &ones * log_mean));
    Ok(VarianceModel {
        points: points.to_vec(),
        weights,
        log_mean,
        bandwidth,
        floor,
        constant: None,
    })
}

/// Outcome of the warm-up step.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmupReport {
    pub warmup_set: Vec<usize>,
    pub reps: usize,
    pub sample_means: Vec<f64>,
    /// `R - 1` denominator, one per warm-up candidate, before flooring.
    pub sample_variances: Vec<f64>,
    pub variance_model: VarianceModel,
    /// `g*(z_n)` for every candidate.
    pub noise_variances: Vec<f64>,
    /// `T_W = |Z_W| · R`.
    pub total: u64,
}

/// Serializable part of [`WarmupReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupSummary {
    pub warmup_set: Vec<usize>,
    pub reps: usize,
    pub sample_means: Vec<f64>,
    pub sample_variances: Vec<f64>,
    pub noise_variances: Vec<f64>,
    pub total: u64,
}

impl WarmupReport {
    pub fn summary(&self) -> WarmupSummary {
        WarmupSummary {
            warmup_set: self.warmup_set.clone(),
            reps: self.reps,
            sample_means: self.sample_means.clone(),
            sample_variances: self.sample_variances.clone(),
            noise_variances: self.noise_variances.clone(),
            total: self.total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Mucb,
    PrMucb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: u64,
    pub candidate: usize,
    pub score: f64,
    pub phase: Phase,
}

/// Evaluates each warm-up candidate `reps` times, then fits `g*`.
pub fn run_warmup<O: Oracle + ?Sized>(
    candidates: &CandidateSet,
    indices: &[usize],
    reps: usize,
    floor: f64,
    retry: &RetryPolicy,
    oracle: &mut O,
    log: &mut ObservationLog,
    trace: &mut Vec<TraceRow>,
) -> Result<WarmupReport> {
    if reps < 2 {
        return Err(Error::InvalidConfig(format!("warm-up needs R >= 2 repetitions, got {reps}")));
    }
    if indices.is_empty() {
        return Err(Error::InsufficientData("empty warm-up set".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= candidates.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: candidates.len(),
        });
    }
    let mut sample_means = Vec::with_capacity(indices.len());
    let mut sample_variances = Vec::with_capacity(indices.len());
    for &n in indices {
        let mut scores = Vec::with_capacity(reps);
        for _ in 0..reps {
            let score = evaluate_with_retry(oracle, n, retry)?;
            let round = log.record(n, score)?;
            trace.push(TraceRow {
                round,
                candidate: n,
                score,
                phase: Phase::Warmup,
            });
            scores.push(score);
        }
        let mean = scores.iter().sum::<f64>() / reps as f64;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
        sample_means.push(mean);
        sample_variances.push(var);
    }
    let points: Vec<DVector<f64>> = indices.iter().map(|&n| candidates.soft_prompt(n).clone()).collect();
    let variance_model = fit_variance_model(&points, &sample_variances, floor)?;
    let noise_variances = candidates
        .soft_prompts()
        .iter()
        .map(|z| variance_model.predict(z))
        .collect();
    Ok(WarmupReport {
        warmup_set: indices.to_vec(),
        reps,
        sample_means,
        sample_variances,
        variance_model,
        noise_variances,
        total: (indices.len() * reps) as u64,
    })
}

/// Stochastic kriging on warm-up means with a constant GLS trend.
#[derive(Debug, Clone)]
pub struct SkModel {
    points: Vec<DVector<f64>>,
    bandwidth: f64,
    tau2: f64,
    trend: f64,
    weights: DVector<f64>,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    one_solved: DVector<f64>,
    scale: f64,
}

impl SkModel {
    /// `means[i]` is the sample mean at `points[i]` and
    /// `intrinsic[i] = σ̂²_i / r_i` its variance.
    pub fn fit(points: &[DVector<f64>], means: &[f64], intrinsic: &[f64]) -> Result<Self> {
        let m = points.len();
        if m == 0 {
            return Err(Error::InsufficientData("stochastic kriging needs data".into()));
        }
        if means.len() != m || intrinsic.len() != m {
            return Err(Error::dims(m, means.len().min(intrinsic.len()), "kriging observations"));
        }
        if means.iter().chain(intrinsic).any(|v| !v.is_finite()) || intrinsic.iter().any(|v| *v < 0.0) {
            return Err(Error::NonFinite("kriging observations".into()));
        }
        let avg = means.iter().sum::<f64>() / m as f64;
        let tau2 = if m > 1 {
            means.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (m as f64 - 1.0)
        } else {
            0.0
        };
        let bandwidth = median_squared_distance(points);
        let mut c = rbf_matrix(points, bandwidth) * tau2;
        for i in 0..m {
            c[(i, i)] += intrinsic[i];
        }
        let scale = match c.diagonal().mean() {
            d if d > 0.0 => d,
            _ => 1.0,
        };
        let factor = cholesky_with_jitter(&c, 1e-10 * scale)?;
        let ones = DVector::from_element(m, 1.0);
        let one_solved = factor.solve(&ones);
        let v = DVector::from_column_slice(means);
        let trend = one_solved.dot(&v) / one_solved.sum();
        let weights = factor.solve(&(&v - &ones * trend));
        if !trend.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("stochastic kriging fit".into()));
        }
        Ok(SkModel {
            points: points.to_vec(),
            bandwidth,
            tau2,
            trend,
            weights,
            factor,
            one_solved,
            scale,
        })
    }

    pub fn trend(&self) -> f64 {
        self.trend
    }

    /// `(μ_SK(z), σ²_SK(z))`, with the MSE including the trend-estimation
    /// term. MSE values within jitter-level rounding of zero become zero.
    pub fn predict(&self, z: &DVector<f64>) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| self.tau2 * rbf(p, z, self.bandwidth)),
        );
        let mean = self.trend + k.dot(&self.weights);
        let solved = self.factor.solve(&k);
        let eta = 1.0 - self.one_solved.dot(&k);
        let mse = self.tau2 - k.dot(&solved) + eta * eta / self.one_solved.sum();
        if mse < 1e-8 * self.scale {
            return (mean, 0.0);
        }
        (mean, mse)
    }
}

/// One synthetic score `ṽ ~ N(μ_SK(z), σ²_SK(z) + noise_variance)`.
pub fn sk_synthetic_draw<R: Rng + ?Sized>(
    model: &SkModel,
    z: &DVector<f64>,
    noise_variance: f64,
    rng: &mut R,
) -> f64 {
    let (mean, mse) = model.predict(z);
    gaussian_draw(mean, mse + noise_variance, rng)
}

fn gaussian_draw<R: Rng + ?Sized>(mean: f64, var: f64, rng: &mut R) -> f64 {
    if var <= 0.0 {
        return mean;
    }
    let e: f64 = rng.sample(StandardNormal);
    mean + var.sqrt() * e
}

/// Candidate-indexed oracle backed by an [`SkModel`] and `g*`.
#[derive(Debug, Clone)]
pub struct SkOracle {
    means: Vec<f64>,
    variances: Vec<f64>,
    rng: ChaCha8Rng,
}

impl SkOracle {
    pub fn new(model: &SkModel, candidates: &CandidateSet, noise_variances: &[f64], seed: u64) -> Result<Self> {
        if noise_variances.len() != candidates.len() {
            return Err(Error::dims(candidates.len(), noise_variances.len(), "noise variances"));
        }
        let (means, variances) = candidates
            .soft_prompts()
            .iter()
            .zip(noise_variances)
            .map(|(z, g)| {
                let (m, s2) = model.predict(z);
                (m, s2 + g)
            })
            .unzip();
        Ok(SkOracle {
            means,
            variances,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }
}

impl Oracle for SkOracle {
    fn num_candidates(&self) -> usize {
        self.means.len()
    }

    fn evaluate(&mut self, candidate: usize) -> std::result::Result<f64, OracleError> {
        if candidate >= self.means.len() {
            return Err(OracleError::Other(format!("candidate {candidate} out of range")));
        }
        Ok(gaussian_draw(self.means[candidate], self.variances[candidate], &mut self.rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mucb,
    PrMucb,
}

impl Method {
    fn phase(self) -> Phase {
        match self {
            Method::Mucb => Phase::Mucb,
            Method::PrMucb => Phase::PrMucb,
        }
    }
}

/// One `(β_t, γ(·))` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPair {
    pub beta: BetaSchedule,
    pub gamma: GammaFn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    pub pairs: Vec<HyperPair>,
    /// Sequential rounds simulated after the synthetic warm-up.
    #[serde(default = "default_inner_budget")]
    pub inner_budget: u64,
}

fn default_inner_budget() -> u64 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub surrogate: SurrogateConfig,
    pub sampler: SamplerConfig,
    /// HMC/VI refresh cadence in rounds.
    pub refresh_every: u64,
    pub acquisition: AcquisitionConfig,
    pub pr: PrConfig,
    /// Replace the optimized `θ*` by the one-hot vector at `argmax α`.
    pub force_one_hot: bool,
    pub warmup_reps: usize,
    pub variance_floor: f64,
    pub retry: RetryPolicy,
    pub tuning: Option<TuningConfig>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            surrogate: SurrogateConfig::default(),
            sampler: SamplerConfig::default(),
            refresh_every: 1,
            acquisition: AcquisitionConfig::default(),
            pr: PrConfig::default(),
            force_one_hot: false,
            warmup_reps: 5,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            retry: RetryPolicy::default(),
            tuning: None,
        }
    }
}

/// Wall-clock milliseconds per phase. Kept out of `run.json` so that file
/// stays reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub warmup_ms: f64,
    pub tuning_ms: f64,
    pub loop_ms: f64,
    /// Part of `loop_ms` spent on posterior updates, sampling and acquisition
    /// optimization, excluding oracle calls.
    pub decision_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningOutcome {
    pub chosen: usize,
    pub pair: HyperPair,
    /// `μ_SK` at each pair's selected candidate; empty after a fallback.
    pub scores: Vec<f64>,
    pub selected: Vec<usize>,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub budget: u64,
    /// `n*`; `None` only when nothing was observed.
    pub selected: Option<usize>,
    pub log: ObservationLog,
    pub trace: Vec<TraceRow>,
    pub acquisition: Vec<AcquisitionRecord>,
    pub sampler: Vec<SamplerDiagnostics>,
    pub warmup: Option<WarmupReport>,
    pub hyperparameters: HyperPair,
    pub tuning: Option<TuningOutcome>,
    pub timing: PhaseTiming,
    /// Set when the run stopped early because the oracle kept failing.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub budget: u64,
    pub observations: usize,
    pub selected: Option<usize>,
    pub counts: Vec<u64>,
    pub sample_means: Vec<Option<f64>>,
    pub warmup: Option<WarmupSummary>,
    pub hyperparameters: HyperPair,
    pub tuning: Option<TuningOutcome>,
    pub error: Option<String>,
}

impl RunResult {
    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            method: self.method,
            budget: self.budget,
            observations: self.log.len(),
            selected: self.selected,
            counts: self.log.counts(),
            sample_means: (0..self.log.num_candidates())
                .map(|n| self.log.sample_mean(n).ok())
                .collect(),
            warmup: self.warmup.as_ref().map(WarmupReport::summary),
            hyperparameters: self.hyperparameters,
            tuning: self.tuning.clone(),
            error: self.error.clone(),
        }
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.trace {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `run.json`, `trace.csv`, `log.jsonl`, `acquisition.csv`,
    /// `sampler.csv` and `timing.json` into `dir`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut run = BufWriter::new(File::create(dir.join("run.json"))?);
        serde_json::to_writer_pretty(&mut run, &self.summary())?;
        run.flush()?;
        self.write_trace_csv(BufWriter::new(File::create(dir.join("trace.csv"))?))?;
        let mut log = BufWriter::new(File::create(dir.join("log.jsonl"))?);
        self.log.write_jsonl(&mut log)?;
        log.flush()?;
        write_acquisition_csv(&self.acquisition, BufWriter::new(File::create(dir.join("acquisition.csv"))?))?;
        let mut sampler = csv::Writer::from_path(dir.join("sampler.csv"))?;
        for row in &self.sampler {
            sampler.serialize(row)?;
        }
        sampler.flush()?;
        let mut timing = BufWriter::new(File::create(dir.join("timing.json"))?);
        serde_json::to_writer_pretty(&mut timing, &self.timing)?;
        timing.flush()?;
        Ok(())
    }
}

/// Independent random streams derived from one seed, so the posterior
/// sampler and the acquisition step never share draws.
struct Streams {
    warmup: ChaCha8Rng,
    posterior: ChaCha8Rng,
    acquisition: ChaCha8Rng,
    tuning: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        };
        Streams {
            warmup: stream(0),
            posterior: stream(1),
            acquisition: stream(2),
            tuning: stream(3),
        }
    }
}

struct RoundContext<'a> {
    surrogate: &'a Surrogate,
    noise: &'a [f64],
    acquisition: AcquisitionConfig,
    method: Method,
    pr: &'a PrConfig,
    force_one_hot: bool,
    retry: &'a RetryPolicy,
}

/// Runs `rounds` sequential evaluations, appending to `log`, `trace` and
/// `records`.
#[allow(clippy::too_many_arguments)]
fn sequential_rounds<O: Oracle + ?Sized>(
    ctx: &RoundContext<'_>,
    engine: &mut PosteriorEngine,
    rounds: u64,
    oracle: &mut O,
    log: &mut ObservationLog,
    trace: &mut Vec<TraceRow>,
    records: &mut Vec<AcquisitionRecord>,
    post_rng: &mut ChaCha8Rng,
    acq_rng: &mut ChaCha8Rng,
    decision: &mut Duration,
) -> Result<()> {
    for _ in 0..rounds {
        let clock = Instant::now();
        let t = log.len() as u64;
        let target = ctx.surrogate.target(log, ctx.noise)?;
        let samples = engine.draw(&target, ctx.acquisition.samples, t + 1, post_rng)?;
        let stats = all_candidate_stats(ctx.surrogate, &samples)?;
        let alpha = mucb_values(&stats, &log.counts(), &ctx.acquisition, t)?;
        let best = argmax(&alpha).ok_or_else(|| Error::InsufficientData("no candidates".into()))?;
        let chosen = match ctx.method {
            Method::Mucb => best,
            Method::PrMucb if ctx.force_one_hot => best,
            Method::PrMucb => {
                let opt = pr_sga_optimize(&alpha, ctx.pr, acq_rng)?;
                pr_sample_candidate(&opt.state, acq_rng)
            }
        };
        *decision += clock.elapsed();
        let score = evaluate_with_retry(oracle, chosen, ctx.retry)?;
        let round = log.record(chosen, score)?;
        trace.push(TraceRow {
            round,
            candidate: chosen,
            score,
            phase: ctx.method.phase(),
        });
        records.push(AcquisitionRecord {
            round,
            candidate: chosen,
            beta: ctx.acquisition.beta.at(t),
            alpha_chosen: alpha[chosen],
            alpha_max: alpha[best],
            mean: stats[chosen].mean,
            std: stats[chosen].std,
        });
    }
    Ok(())
}

/// Algorithm-1 style run: warm-up, optional tuning, then M-UCB rounds
/// until exactly `budget` observations exist.
pub fn run_mucb_loop<O: Oracle + ?Sized>(
    candidates: &CandidateSet,
    cfg: &LoopConfig,
    budget: u64,
    oracle: &mut O,
    seed: u64,
) -> Result<RunResult> {
    run_loop(candidates, cfg, Method::Mucb, budget, oracle, seed)
}

/// As [`run_mucb_loop`] with the candidate drawn from the optimized
/// probabilistic reparametrization `p(·; θ*)`.
pub fn run_prmucb_loop<O: Oracle + ?Sized>(
    candidates: &CandidateSet,
    cfg: &LoopConfig,
    budget: u64,
    oracle: &mut O,
    seed: u64,
) -> Result<RunResult> {
    run_loop(candidates, cfg, Method::PrMucb, budget, oracle, seed)
}

fn run_loop<O: Oracle + ?Sized>(
    candidates: &CandidateSet,
    cfg: &LoopConfig,
    method: Method,
    budget: u64,
    oracle: &mut O,
    seed: u64,
) -> Result<RunResult> {
    if candidates.is_empty() {
        return Err(Error::InsufficientData("empty candidate set".into()));
    }
    if oracle.num_candidates() != candidates.len() {
        return Err(Error::dims(candidates.len(), oracle.num_candidates(), "oracle candidates"));
    }
    let mut streams = Streams::new(seed);
    let indices = choose_warmup_set(candidates, &mut streams.warmup);
    let t_w = (indices.len() * cfg.warmup_reps) as u64;
    if budget <= t_w {
        return Err(Error::InvalidConfig(format!(
            "budget T = {budget} must exceed the warm-up cost T_W = {t_w}"
        )));
    }
    let surrogate = cfg.surrogate.build(candidates.soft_prompts())?;
    let mut result = RunResult {
        method,
        budget,
        selected: None,
        log: ObservationLog::new(candidates.len()),
        trace: Vec::with_capacity(budget as usize),
        acquisition: Vec::new(),
        sampler: Vec::new(),
        warmup: None,
        hyperparameters: HyperPair {
            beta: cfg.acquisition.beta,
            gamma: cfg.acquisition.gamma,
        },
        tuning: None,
        timing: PhaseTiming::default(),
        error: None,
    };

    let clock = Instant::now();
    let warm = run_warmup(
        candidates,
        &indices,
        cfg.warmup_reps,
        cfg.variance_floor,
        &cfg.retry,
        oracle,
        &mut result.log,
        &mut result.trace,
    );
    result.timing.warmup_ms = ms(clock);
    let report = match warm {
        Ok(r) => r,
        Err(e @ Error::Oracle { .. }) => return Ok(abort(result, e)),
        Err(e) => return Err(e),
    };

    let mut acquisition = cfg.acquisition;
    if let Some(tuning) = &cfg.tuning {
        let clock = Instant::now();
        let outcome = tune_hyperparameters(
            candidates,
            &surrogate,
            &report,
            cfg,
            method,
            &tuning.pairs,
            tuning.inner_budget,
            &mut streams.tuning,
        )?;
        acquisition.beta = outcome.pair.beta;
        acquisition.gamma = outcome.pair.gamma;
        result.hyperparameters = outcome.pair;
        result.tuning = Some(outcome);
        result.timing.tuning_ms = ms(clock);
    }

    let ctx = RoundContext {
        surrogate: &surrogate,
        noise: &report.noise_variances,
        acquisition,
        method,
        pr: &cfg.pr,
        force_one_hot: cfg.force_one_hot,
        retry: &cfg.retry,
    };
    result.warmup = Some(report.clone());
    let mut engine = PosteriorEngine::new(cfg.sampler.clone(), cfg.refresh_every);
    let clock = Instant::now();
    let mut decision = Duration::ZERO;
    let outcome = sequential_rounds(
        &ctx,
        &mut engine,
        budget - t_w,
        oracle,
        &mut result.log,
        &mut result.trace,
        &mut result.acquisition,
        &mut streams.posterior,
        &mut streams.acquisition,
        &mut decision,
    );
    result.timing.loop_ms = ms(clock);
    result.timing.decision_ms = decision.as_secs_f64() * 1e3;
    result.sampler = engine.diagnostics().to_vec();
    match outcome {
        Ok(()) => {}
        Err(e @ Error::Oracle { .. }) => return Ok(abort(result, e)),
        Err(e) => return Err(e),
    }
    result.selected = Some(result.log.final_selection()?);
    Ok(result)
}

fn abort(mut result: RunResult, err: Error) -> RunResult {
    log::error!("run aborted after {} observations: {err}", result.log.len());
    result.selected = result.log.final_selection().ok();
    result.error = Some(err.to_string());
    result
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Picks `(β, γ)` by simulating the whole stage per pair against an SK
/// model of the warm-up data: a synthetic warm-up on the same candidates,
/// then `inner_budget` sequential rounds. The score of a pair is `μ_SK` at
/// its selected candidate; ties go to the lowest index. Every pair sees
/// the same synthetic random streams. No real oracle calls are made.
#[allow(clippy::too_many_arguments)]
pub fn tune_hyperparameters<R: Rng + ?Sized>(
    candidates: &CandidateSet,
    surrogate: &Surrogate,
    report: &WarmupReport,
    cfg: &LoopConfig,
    method: Method,
    pairs: &[HyperPair],
    inner_budget: u64,
    rng: &mut R,
) -> Result<TuningOutcome> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("hyperparameter tuning needs at least one pair".into()));
    }
    let fallback = || TuningOutcome {
        chosen: 0,
        pair: HyperPair {
            beta: cfg.acquisition.beta,
            gamma: cfg.acquisition.gamma,
        },
        scores: Vec::new(),
        selected: Vec::new(),
        fallback: true,
    };
    let points: Vec<DVector<f64>> = report
        .warmup_set
        .iter()
        .map(|&n| candidates.soft_prompt(n).clone())
        .collect();
    let intrinsic: Vec<f64> = report
        .sample_variances
        .iter()
        .map(|v| v / report.reps as f64)
        .collect();
    let sk = match SkModel::fit(&points, &report.sample_means, &intrinsic) {
        Ok(sk) => sk,
        Err(e) => {
            log::warn!("stochastic kriging fit failed ({e}); keeping the configured (β, γ)");
            return Ok(fallback());
        }
    };
    let oracle_seed: u64 = rng.random();
    let stream_seed: u64 = rng.random();
    let mut scores = Vec::with_capacity(pairs.len());
    let mut selected = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let mut oracle = SkOracle::new(&sk, candidates, &report.noise_variances, oracle_seed)?;
        let mut streams = Streams::new(stream_seed);
        let mut log = ObservationLog::new(candidates.len());
        let mut trace = Vec::new();
        let mut records = Vec::new();
        for &n in &report.warmup_set {
            for _ in 0..report.reps {
                let v = evaluate_with_retry(&mut oracle, n, &cfg.retry)?;
                log.record(n, v)?;
            }
        }
        let ctx = RoundContext {
            surrogate,
            noise: &report.noise_variances,
            acquisition: AcquisitionConfig {
                beta: pair.beta,
                gamma: pair.gamma,
                samples: cfg.acquisition.samples,
            },
            method,
            pr: &cfg.pr,
            force_one_hot: cfg.force_one_hot,
            retry: &cfg.retry,
        };
        let mut engine = PosteriorEngine::new(cfg.sampler.clone(), cfg.refresh_every);
        sequential_rounds(
            &ctx,
            &mut engine,
            inner_budget,
            &mut oracle,
            &mut log,
            &mut trace,
            &mut records,
            &mut streams.posterior,
            &mut streams.acquisition,
            &mut Duration::default(),
        )?;
        let pick = log.final_selection()?;
        selected.push(pick);
        scores.push(oracle.means()[pick]);
    }
    let chosen = argmax(&scores).expect("pairs is non-empty");
    Ok(TuningOutcome {
        chosen,
        pair: pairs[chosen],
        scores,
        selected,
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::SyntheticOracle;
    use proptest::prelude::*;
    use rand::Rng;

    fn one_hot_set(n: usize) -> CandidateSet {
        let zs = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        CandidateSet::from_soft_prompts(zs).unwrap()
    }

    fn line_set(values: &[f64]) -> CandidateSet {
        CandidateSet::from_soft_prompts(values.iter().map(|v| vec![*v]).collect()).unwrap()
    }

    fn quick_retry() -> RetryPolicy {
        RetryPolicy {
            initial_backoff_ms: 0,
            ..RetryPolicy::default()
        }
    }

    struct Flaky {
        inner: SyntheticOracle,
        failures_left: usize,
        calls: usize,
    }

    impl Oracle for Flaky {
        fn num_candidates(&self) -> usize {
            self.inner.num_candidates()
        }

        fn evaluate(&mut self, candidate: usize) -> std::result::Result<f64, OracleError> {
            self.calls += 1;
            if self.failures_left > 0 {
                self.failures_left -= 1;
                return Err(OracleError::Timeout(10));
            }
            self.inner.evaluate(candidate)
        }
    }

    struct Scripted(Vec<f64>, usize, usize);

    impl Oracle for Scripted {
        fn num_candidates(&self) -> usize {
            self.2
        }

        fn evaluate(&mut self, _: usize) -> std::result::Result<f64, OracleError> {
            let v = self.0[self.1 % self.0.len()];
            self.1 += 1;
            Ok(v)
        }
    }

    #[test]
    fn warmup_set_uses_initial_prompts() {
        let set = CandidateSet::from_soft_prompts((0..6).map(|i| vec![i as f64]).collect()).unwrap();
        let mut set = set;
        set = CandidateSet::from_projection(
            set.latents().to_vec(),
            set.projection().clone(),
            set.latent_box(),
            vec![3, 1, 2],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(choose_warmup_set(&set, &mut rng), vec![1, 2, 3]);
    }

    #[test]
    fn warmup_set_size_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let big = line_set(&(0..100).map(f64::from).collect::<Vec<_>>());
        let picked = choose_warmup_set(&big, &mut rng);
        assert_eq!(picked.len(), 5);
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        let small = line_set(&(0..20).map(f64::from).collect::<Vec<_>>());
        assert_eq!(choose_warmup_set(&small, &mut rng).len(), 2);
        assert_eq!(choose_warmup_set(&line_set(&[0.0]), &mut rng), vec![0]);
    }

    #[test]
    fn retry_recovers_then_gives_up() {
        let inner = SyntheticOracle::with_uniform_noise(vec![1.0], 0.0, 0).unwrap();
        let mut ok = Flaky {
            inner: inner.clone(),
            failures_left: 3,
            calls: 0,
        };
        assert_eq!(evaluate_with_retry(&mut ok, 0, &quick_retry()).unwrap(), 1.0);
        assert_eq!(ok.calls, 4);
        let mut bad = Flaky {
            inner,
            failures_left: 4,
            calls: 0,
        };
        match evaluate_with_retry(&mut bad, 0, &quick_retry()) {
            Err(Error::Oracle { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("expected oracle error, got {other:?}"),
        }
    }

    #[test]
    fn warmup_sample_variance_and_floor() {
        let set = line_set(&[0.0, 1.0]);
        let mut log = ObservationLog::new(2);
        let mut trace = Vec::new();
        let mut oracle = Scripted(vec![0.0, 1.0, 0.0, 1.0, 0.0], 0, 2);
        let report = run_warmup(&set, &[0], 5, 1e-8, &quick_retry(), &mut oracle, &mut log, &mut trace).unwrap();
        assert!((report.sample_variances[0] - 0.3).abs() < 1e-15);
        assert_eq!(report.total, 5);
        assert_eq!(log.len(), 5);
        assert!(trace.iter().all(|r| r.phase == Phase::Warmup));

        let mut log = ObservationLog::new(2);
        let mut constant = Scripted(vec![2.5], 0, 2);
        let report = run_warmup(&set, &[0, 1], 3, 1e-8, &quick_retry(), &mut constant, &mut log, &mut trace).unwrap();
        assert_eq!(report.sample_variances, vec![0.0, 0.0]);
        assert!(report.noise_variances.iter().all(|&g| g == 1e-8));
    }

    #[test]
    fn warmup_variance_concentrates() {
        let set = line_set(&[0.0, 1.0]);
        let mut oracle = SyntheticOracle::with_uniform_noise(vec![0.0, 0.0], 0.2, 5).unwrap();
        let mut log = ObservationLog::new(2);
        let report = run_warmup(&set, &[0, 1], 200, 1e-8, &quick_retry(), &mut oracle, &mut log, &mut Vec::new()).unwrap();
        for v in &report.sample_variances {
            assert!((0.03..=0.05).contains(v), "{v}");
        }
    }

    #[test]
    fn warmup_rejects_single_rep() {
        let set = line_set(&[0.0, 1.0]);
        let mut oracle = Scripted(vec![0.0], 0, 2);
        let err = run_warmup(&set, &[0], 1, 1e-8, &quick_retry(), &mut oracle, &mut ObservationLog::new(2), &mut Vec::new());
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn variance_model_constant_and_degenerate() {
        let pts = vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0]), DVector::from_vec(vec![3.0])];
        let g = fit_variance_model(&pts, &[0.04, 0.04, 0.04], 1e-8).unwrap();
        for z in [-2.0, 0.5, 10.0] {
            assert_eq!(g.predict(&DVector::from_vec(vec![z])), 0.04);
        }
        let same = vec![DVector::from_vec(vec![1.0]); 3];
        let g = fit_variance_model(&same, &[0.01, 0.02, 0.03], 1e-8).unwrap();
        assert!(g.is_constant());
        assert!((g.predict(&DVector::from_vec(vec![5.0])) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn variance_model_interpolates_two_points() {
        let pts = vec![DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![1.0, 2.0])];
        let g = fit_variance_model(&pts, &[0.01, 0.2], 1e-8).unwrap();
        assert!((g.predict(&pts[0]) / 0.01 - 1.0).abs() < 1e-8);
        assert!((g.predict(&pts[1]) / 0.2 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn variance_model_tracks_smooth_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let field = |z: &DVector<f64>| 0.01 * (1.0 + z.norm_squared());
        let draw = |rng: &mut ChaCha8Rng| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let train: Vec<_> = (0..30).map(|_| draw(&mut rng)).collect();
        let vars: Vec<f64> = train.iter().map(field).collect();
        let g = fit_variance_model(&train, &vars, 1e-8).unwrap();
        let test: Vec<_> = (0..200).map(|_| draw(&mut rng)).collect();
        let mse = test.iter().map(|z| ((g.predict(z) - field(z)) / field(z)).powi(2)).sum::<f64>() / 200.0;
        assert!(mse.sqrt() < 0.5, "relative rmse {}", mse.sqrt());
    }

    proptest! {
        #[test]
        fn variance_model_is_floored(vals in proptest::collection::vec(0.0f64..1.0, 2..8), probe in -5.0f64..5.0) {
            let pts: Vec<_> = (0..vals.len()).map(|i| DVector::from_vec(vec![i as f64 * 0.7])).collect();
            let g = fit_variance_model(&pts, &vals, 1e-8).unwrap();
            let v = g.predict(&DVector::from_vec(vec![probe]));
            prop_assert!(v >= 1e-8 && v.is_finite());
        }
    }

    #[test]
    fn single_candidate_gets_whole_budget() {
        let set = line_set(&[0.5]);
        let mut oracle = SyntheticOracle::with_uniform_noise(vec![1.0], 0.1, 3).unwrap();
        let cfg = LoopConfig::default();
        for method in [Method::Mucb, Method::PrMucb] {
            let run = run_loop(&set, &cfg, method, 12, &mut oracle, 1).unwrap();
            assert_eq!(run.selected, Some(0));
            assert_eq!(run.log.len(), 12);
            assert_eq!(run.trace.len(), 12);
        }
    }

    fn two_arm(seed: u64) -> (CandidateSet, SyntheticOracle) {
        let set = CandidateSet::from_projection(
            one_hot_set(2).latents().to_vec(),
            DMatrix::identity(2, 2),
            Default::default(),
            vec![0, 1],
        )
        .unwrap();
        let oracle = SyntheticOracle::with_uniform_noise(vec![0.0, 1.0], 0.01, seed).unwrap();
        (set, oracle)
    }

    #[test]
    fn mucb_two_candidates_consistent() {
        let cfg = LoopConfig {
            warmup_reps: 2,
            ..LoopConfig::default()
        };
        let hits = (0..15)
            .filter(|&s| {
                let (set, mut oracle) = two_arm(100 + s);
                run_mucb_loop(&set, &cfg, 30, &mut oracle, s).unwrap().selected == Some(1)
            })
            .count();
        assert!(hits >= 14, "{hits}/15");
    }

    #[test]
    fn prmucb_two_candidates_consistent() {
        let cfg = LoopConfig {
            warmup_reps: 2,
            ..LoopConfig::default()
        };
        let hits = (0..15)
            .filter(|&s| {
                let (set, mut oracle) = two_arm(200 + s);
                run_prmucb_loop(&set, &cfg, 50, &mut oracle, s).unwrap().selected == Some(1)
            })
            .count();
        assert!(hits >= 13, "{hits}/15");
    }

    #[test]
    fn greedy_blr_on_line_finds_argmax() {
        let set = line_set(&[-1.0, -0.5, 0.2, 0.8, 1.5]);
        let means: Vec<f64> = [-1.0, -0.5, 0.2, 0.8, 1.5].iter().map(|z| 2.0 * z).collect();
        let mut oracle = SyntheticOracle::with_uniform_noise(means, 0.0, 0).unwrap();
        let cfg = LoopConfig {
            acquisition: AcquisitionConfig {
                beta: BetaSchedule::Constant { value: 0.0 },
                gamma: GammaFn::zero(),
                samples: 50,
            },
            warmup_reps: 2,
            ..LoopConfig::default()
        };
        let run = run_mucb_loop(&set, &cfg, 20, &mut oracle, 4).unwrap();
        assert_eq!(run.selected, Some(4));
    }

    #[test]
    fn forced_one_hot_matches_mucb_trace() {
        let set = CandidateSet::from_projection(
            line_set(&[0.0, 0.5, 1.0]).latents().to_vec(),
            DMatrix::identity(1, 1),
            Default::default(),
            vec![0, 2],
        )
        .unwrap();
        let cfg = LoopConfig {
            force_one_hot: true,
            warmup_reps: 2,
            ..LoopConfig::default()
        };
        let mut a = SyntheticOracle::with_uniform_noise(vec![0.0, 0.5, 1.0], 0.1, 9).unwrap();
        let mut b = a.clone();
        let m = run_mucb_loop(&set, &cfg, 25, &mut a, 77).unwrap();
        let p = run_prmucb_loop(&set, &cfg, 25, &mut b, 77).unwrap();
        let strip = |r: &RunResult| r.trace.iter().map(|t| (t.round, t.candidate, t.score)).collect::<Vec<_>>();
        assert_eq!(strip(&m), strip(&p));
        assert!(m.acquisition.iter().all(|r| r.alpha_chosen == r.alpha_max));
    }

    #[test]
    fn budget_is_exact_and_runs_reproduce() {
        let set = line_set(&[0.0, 0.3, 0.6, 0.9, 1.2, 1.5]);
        let cfg = LoopConfig::default();
        let run = |seed| {
            let mut o = SyntheticOracle::with_uniform_noise(vec![0.1, 0.4, 0.2, 0.9, 0.3, 0.5], 0.2, seed).unwrap();
            run_prmucb_loop(&set, &cfg, 40, &mut o, seed).unwrap()
        };
        let a = run(5);
        let b = run(5);
        assert_eq!(a.log.len(), 40);
        assert_eq!(a.warmup.as_ref().unwrap().total, 10);
        assert_eq!(a.trace.iter().filter(|r| r.phase == Phase::Warmup).count(), 10);
        assert_eq!(a.selected, Some(a.log.final_selection().unwrap()));
        assert_eq!(
            serde_json::to_string(&a.summary()).unwrap(),
            serde_json::to_string(&b.summary()).unwrap()
        );
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn budget_must_exceed_warmup() {
        let set = line_set(&[0.0, 1.0]);
        let mut o = SyntheticOracle::with_uniform_noise(vec![0.0, 1.0], 0.1, 0).unwrap();
        let err = run_mucb_loop(&set, &LoopConfig::default(), 10, &mut o, 0);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn oracle_failure_returns_partial_result() {
        let set = line_set(&[0.0, 1.0, 2.0]);
        let inner = SyntheticOracle::with_uniform_noise(vec![0.0, 1.0, 2.0], 0.1, 0).unwrap();
        struct DiesAfter(SyntheticOracle, usize);
        impl Oracle for DiesAfter {
            fn num_candidates(&self) -> usize {
                3
            }
            fn evaluate(&mut self, n: usize) -> std::result::Result<f64, OracleError> {
                if self.1 == 0 {
                    return Err(OracleError::Transport("down".into()));
                }
                self.1 -= 1;
                self.0.evaluate(n)
            }
        }
        let mut oracle = DiesAfter(inner, 14);
        let cfg = LoopConfig {
            retry: quick_retry(),
            ..LoopConfig::default()
        };
        let run = run_mucb_loop(&set, &cfg, 30, &mut oracle, 0).unwrap();
        assert!(!run.is_complete());
        assert_eq!(run.log.len(), 14);
        assert!(run.selected.is_some());
        assert!(run.error.as_deref().unwrap().contains("4 attempts"));
    }

    #[test]
    fn every_candidate_evaluated_when_gamma_dominates() {
        let n = 8;
        let zs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let set = line_set(&zs);
        let mut oracle = SyntheticOracle::with_uniform_noise(zs.clone(), 0.05, 1).unwrap();
        let cfg = LoopConfig {
            warmup_reps: 2,
            ..LoopConfig::default()
        };
        let run = run_mucb_loop(&set, &cfg, (n + 4) as u64, &mut oracle, 2).unwrap();
        assert!(run.log.counts().iter().all(|&r| r >= 1), "{:?}", run.log.counts());
    }

    #[test]
    fn outputs_written() {
        let set = line_set(&[0.0, 1.0, 2.0]);
        let mut o = SyntheticOracle::with_uniform_noise(vec![0.0, 1.0, 0.5], 0.1, 0).unwrap();
        let run = run_mucb_loop(&set, &LoopConfig::default(), 15, &mut o, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        run.write_outputs(dir.path()).unwrap();
        let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert!(trace.starts_with("round,candidate,score,phase\n"));
        assert_eq!(trace.lines().count(), 16);
        assert!(trace.contains(",warmup\n") && trace.contains(",mucb\n"));
        let log = std::fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 15);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
        assert_eq!(json["selected"], serde_json::json!(run.selected.unwrap()));
        assert!(dir.path().join("timing.json").exists());
    }

    #[test]
    fn sk_draw_is_exact_without_variance() {
        let pts = vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])];
        let sk = SkModel::fit(&pts, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mu, mse) = sk.predict(&pts[0]);
        assert_eq!(mse, 0.0);
        assert_eq!(sk_synthetic_draw(&sk, &pts[0], 0.0, &mut rng), mu);
    }

    #[test]
    fn sk_draw_variance_and_determinism() {
        let pts = vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.5])];
        let sk = SkModel::fit(&pts, &[0.2, 0.9, 0.4], &[0.01, 0.02, 0.01]).unwrap();
        let z = DVector::from_vec(vec![1.7]);
        let (mu, mse) = sk.predict(&z);
        let g = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<f64> = (0..10_000).map(|_| sk_synthetic_draw(&sk, &z, g, &mut rng)).collect();
        let m = draws.iter().sum::<f64>() / 1e4;
        let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (1e4 - 1.0);
        assert!((v / (mse + g) - 1.0).abs() < 0.1, "{v} vs {}", mse + g);
        assert!((m - mu).abs() < 4.0 * ((mse + g) / 1e4).sqrt());
        let mut r1 = ChaCha8Rng::seed_from_u64(8);
        let mut r2 = ChaCha8Rng::seed_from_u64(8);
        assert_eq!(sk_synthetic_draw(&sk, &z, g, &mut r1), sk_synthetic_draw(&sk, &z, g, &mut r2));
    }

    #[test]
    fn sk_interpolates_noise_free_data() {
        let pts = vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.0])];
        let sk = SkModel::fit(&pts, &[0.0, 1.0, 0.5], &[0.0; 3]).unwrap();
        for (p, want) in pts.iter().zip([0.0, 1.0, 0.5]) {
            let (mu, mse) = sk.predict(p);
            assert!((mu - want).abs() < 1e-6, "{mu} vs {want}");
            assert!(mse < 1e-6);
        }
    }

    fn tuning_fixture(noise: f64, seed: u64) -> (CandidateSet, Surrogate, WarmupReport) {
        let n = 6;
        let base = one_hot_set(n);
        let set = CandidateSet::from_projection(
            base.latents().to_vec(),
            DMatrix::identity(n, n),
            Default::default(),
            (0..n).collect(),
        )
        .unwrap();
        let means = vec![1.0, 0.7, 0.7, 0.7, 0.7, 0.7];
        let mut oracle = SyntheticOracle::with_uniform_noise(means, noise, seed).unwrap();
        let mut log = ObservationLog::new(n);
        let report = run_warmup(&set, &(0..n).collect::<Vec<_>>(), 2, 1e-8, &quick_retry(), &mut oracle, &mut log, &mut Vec::new()).unwrap();
        let surrogate = SurrogateConfig::Blr { prior_scale: 0.5 }.build(set.soft_prompts()).unwrap();
        (set, surrogate, report)
    }

    #[test]
    fn tuning_single_and_duplicate_pairs() {
        let (set, surrogate, report) = tuning_fixture(0.1, 0);
        let cfg = LoopConfig::default();
        let pair = HyperPair {
            beta: BetaSchedule::Constant { value: 0.5 },
            gamma: GammaFn::zero(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = tune_hyperparameters(&set, &surrogate, &report, &cfg, Method::Mucb, &[pair], 20, &mut rng).unwrap();
        assert_eq!(one.pair, pair);
        let dup = tune_hyperparameters(&set, &surrogate, &report, &cfg, Method::Mucb, &[pair, pair, pair], 20, &mut rng).unwrap();
        assert_eq!(dup.chosen, 0);
        assert!(dup.scores.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn tuning_is_deterministic() {
        let (set, surrogate, report) = tuning_fixture(0.3, 4);
        let cfg = LoopConfig::default();
        let pairs = [
            HyperPair {
                beta: BetaSchedule::Constant { value: 0.0 },
                gamma: GammaFn::zero(),
            },
            HyperPair {
                beta: BetaSchedule::SqrtTwoLog,
                gamma: GammaFn::default(),
            },
        ];
        let go = || {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            tune_hyperparameters(&set, &surrogate, &report, &cfg, Method::Mucb, &pairs, 30, &mut rng).unwrap()
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn tuning_prefers_exploration_on_deceptive_landscape() {
        // Warm-up at x = -1, 0, 1 with means 1, 1, 0. The kriging mean peaks
        // between the two good warm-up points at x = -0.5, which a greedy
        // linear surrogate never visits.
        let xs = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let set = CandidateSet::from_projection(
            CandidateSet::from_soft_prompts(xs.iter().map(|&x| vec![0.5, 0.5 * x]).collect())
                .unwrap()
                .latents()
                .to_vec(),
            DMatrix::identity(2, 2),
            Default::default(),
            vec![0, 2, 4],
        )
        .unwrap();
        let g = VarianceModel::constant(0.01, 1e-8);
        let report = WarmupReport {
            warmup_set: vec![0, 2, 4],
            reps: 5,
            sample_means: vec![1.0, 1.0, 0.0],
            sample_variances: vec![0.01; 3],
            noise_variances: vec![0.01; 5],
            variance_model: g,
            total: 15,
        };
        let points: Vec<_> = [0, 2, 4].iter().map(|&n| set.soft_prompt(n).clone()).collect();
        let sk = SkModel::fit(&points, &report.sample_means, &[0.002; 3]).unwrap();
        let mu: Vec<f64> = set.soft_prompts().iter().map(|z| sk.predict(z).0).collect();
        assert_eq!(argmax(&mu), Some(1));
        let surrogate = SurrogateConfig::Blr { prior_scale: 1.0 }.build(set.soft_prompts()).unwrap();
        let greedy = HyperPair {
            beta: BetaSchedule::Constant { value: 0.0 },
            gamma: GammaFn::zero(),
        };
        let explore = HyperPair {
            beta: BetaSchedule::SqrtTwoLog,
            gamma: GammaFn::default(),
        };
        let cfg = LoopConfig::default();
        let mut wins = 0;
        for rep in 0..15 {
            let mut rng = ChaCha8Rng::seed_from_u64(rep);
            let out = tune_hyperparameters(&set, &surrogate, &report, &cfg, Method::Mucb, &[greedy, explore], 60, &mut rng)
                .unwrap();
            if out.chosen == 1 {
                wins += 1;
            }
        }
        assert!(wins > 7, "{wins}/15");
    }
}
