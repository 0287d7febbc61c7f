//! Posterior sampling for surrogate parameters: exact Gaussian draws,
//! Hamiltonian Monte Carlo and mean-field variational inference.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::standard_normal_vector;
use crate::surrogate::{blr_exact_posterior, GaussianPosterior, SurrogateTarget};

/// Unnormalized log density with gradient.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density(&self, w: &DVector<f64>) -> Result<f64>;
    fn log_density_and_gradient(&self, w: &DVector<f64>) -> Result<(f64, DVector<f64>)>;
}

impl LogDensity for SurrogateTarget<'_> {
    fn dim(&self) -> usize {
        SurrogateTarget::dim(self)
    }

    fn log_density(&self, w: &DVector<f64>) -> Result<f64> {
        SurrogateTarget::log_density(self, w)
    }

    fn log_density_and_gradient(&self, w: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        SurrogateTarget::log_density_and_gradient(self, w)
    }
}

/// Adapts a closure returning `(log p, ∇ log p)`.
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> FnDensity<F>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    pub fn new(dim: usize, f: F) -> Self {
        FnDensity { dim, f }
    }
}

impl<F> LogDensity for FnDensity<F>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, w: &DVector<f64>) -> Result<f64> {
        Ok((self.f)(w).0)
    }

    fn log_density_and_gradient(&self, w: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        Ok((self.f)(w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    Hmc,
    Vi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSampleSet {
    pub samples: Vec<DVector<f64>>,
    pub provenance: Provenance,
    pub round: u64,
}

impl PosteriorSampleSet {
    pub fn new(samples: Vec<DVector<f64>>, provenance: Provenance, round: u64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "posterior sample set needs K >= 2, got {}",
                samples.len()
            )));
        }
        let p = samples[0].len();
        if let Some(s) = samples.iter().find(|s| s.len() != p) {
            return Err(Error::dims(p, s.len(), "posterior sample"));
        }
        Ok(PosteriorSampleSet {
            samples,
            provenance,
            round,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 posterior samples, got {k}")));
    }
    Ok(())
}

/// `K` draws `mean + L ξ` with `L` the Cholesky factor of the covariance
/// (retrying once with jitter `1e-10 · trace / p`).
pub fn exact_gaussian_sample<R: Rng + ?Sized>(
    posterior: &GaussianPosterior,
    k: usize,
    round: u64,
    rng: &mut R,
) -> Result<PosteriorSampleSet> {
    check_k(k)?;
    let p = posterior.dim();
    let trace = posterior.covariance.trace();
    if trace == 0.0 {
        return PosteriorSampleSet::new(vec![posterior.mean.clone(); k], Provenance::Exact, round);
    }
    let ch = match posterior.covariance.clone().cholesky() {
        Some(c) => c,
        None => {
            let mut m = posterior.covariance.clone();
            let jitter = 1e-10 * trace / p as f64;
            for i in 0..p {
                m[(i, i)] += jitter;
            }
            m.cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("posterior covariance".into()))?
        }
    };
    let l = ch.l();
    let samples = (0..k)
        .map(|_| &posterior.mean + &l * standard_normal_vector(p, rng))
        .collect();
    PosteriorSampleSet::new(samples, Provenance::Exact, round)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub burn_in: usize,
    /// Diagonal of the mass matrix; identity when absent.
    pub mass: Option<Vec<f64>>,
    /// Dual-averaging step-size adaptation during burn-in.
    pub adapt_step_size: bool,
    pub target_accept: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            step_size: 0.01,
            leapfrog_steps: 20,
            burn_in: 500,
            mass: None,
            adapt_step_size: true,
            target_accept: 0.75,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!("step size must be > 0, got {}", self.step_size)));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::InvalidConfig("leapfrog steps must be >= 1".into()));
        }
        if !(0.0 < self.target_accept && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig("target acceptance must lie in (0, 1)".into()));
        }
        if let Some(m) = &self.mass {
            if m.len() != dim {
                return Err(Error::dims(dim, m.len(), "mass matrix diagonal"));
            }
            if m.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidConfig("mass entries must be > 0".into()));
            }
        }
        Ok(())
    }

    fn inverse_mass(&self, dim: usize) -> DVector<f64> {
        match &self.mass {
            Some(m) => DVector::from_iterator(dim, m.iter().map(|v| 1.0 / v)),
            None => DVector::from_element(dim, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HmcStats {
    pub proposals: usize,
    pub accepted: usize,
    pub divergences: usize,
    /// Step size used after burn-in.
    pub step_size: f64,
}

impl HmcStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// State of a leapfrog trajectory endpoint.
#[derive(Debug, Clone)]
pub struct PhasePoint {
    pub position: DVector<f64>,
    pub momentum: DVector<f64>,
    pub log_density: f64,
    pub gradient: DVector<f64>,
}

impl PhasePoint {
    pub fn new<T: LogDensity + ?Sized>(target: &T, position: DVector<f64>, momentum: DVector<f64>) -> Result<Self> {
        let (log_density, gradient) = target.log_density_and_gradient(&position)?;
        Ok(PhasePoint {
            position,
            momentum,
            log_density,
            gradient,
        })
    }

    fn is_finite(&self) -> bool {
        self.log_density.is_finite() && self.gradient.iter().all(|g| g.is_finite())
    }

    /// `H = -log p(q) + ½ pᵀ M⁻¹ p`.
    pub fn hamiltonian(&self, inverse_mass: &DVector<f64>) -> f64 {
        let kinetic: f64 = self
            .momentum
            .iter()
            .zip(inverse_mass.iter())
            .map(|(p, m)| p * p * m)
            .sum();
        -self.log_density + 0.5 * kinetic
    }
}

/// `steps` leapfrog updates: half momentum step, alternating full steps,
/// closing half momentum step.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    start: &PhasePoint,
    step_size: f64,
    steps: usize,
    inverse_mass: &DVector<f64>,
) -> Result<PhasePoint> {
    let mut q = start.position.clone();
    let mut p = start.momentum.clone();
    let mut grad = start.gradient.clone();
    let mut logp = start.log_density;
    p.axpy(0.5 * step_size, &grad, 1.0);
    for i in 0..steps {
        q += (&p).component_mul(inverse_mass) * step_size;
        let (lp, g) = target.log_density_and_gradient(&q)?;
        logp = lp;
        grad = g;
        if !logp.is_finite() {
            break;
        }
        if i + 1 < steps {
            p.axpy(step_size, &grad, 1.0);
        }
    }
    p.axpy(0.5 * step_size, &grad, 1.0);
    Ok(PhasePoint {
        position: q,
        momentum: p,
        log_density: logp,
        gradient: grad,
    })
}

struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps_bar: f64,
    iteration: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(step_size: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * step_size).ln(),
            h_bar: 0.0,
            log_eps_bar: step_size.ln(),
            iteration: 0.0,
            target,
        }
    }

    fn update(&mut self, accept_prob: f64) -> f64 {
        self.iteration += 1.0;
        let m = self.iteration;
        let w = 1.0 / (m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        let log_eps = self.mu - m.sqrt() / Self::GAMMA * self.h_bar;
        let eta = m.powf(-Self::KAPPA);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step_size(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Chain position and tuned step size carried between calls so later rounds
/// start near the previous posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcChain {
    pub position: DVector<f64>,
    pub step_size: f64,
}

/// Runs `burn_in` discarded transitions then records `k` states. A rejected
/// proposal records the current state again. Trajectories that reach a
/// non-finite density count as rejected divergences.
pub fn hmc_sample<T, R>(
    target: &T,
    init: &DVector<f64>,
    cfg: &HmcConfig,
    k: usize,
    round: u64,
    rng: &mut R,
) -> Result<(PosteriorSampleSet, HmcStats)>
where
    T: LogDensity + ?Sized,
    R: Rng + ?Sized,
{
    let (samples, stats, _) = hmc_run(target, init, cfg, k, rng)?;
    Ok((PosteriorSampleSet::new(samples, Provenance::Hmc, round)?, stats))
}

fn hmc_run<T, R>(
    target: &T,
    init: &DVector<f64>,
    cfg: &HmcConfig,
    k: usize,
    rng: &mut R,
) -> Result<(Vec<DVector<f64>>, HmcStats, DVector<f64>)>
where
    T: LogDensity + ?Sized,
    R: Rng + ?Sized,
{
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::dims(dim, init.len(), "HMC initial state"));
    }
    cfg.validate(dim)?;
    check_k(k)?;
    let inv_mass = cfg.inverse_mass(dim);
    let mass_sd = inv_mass.map(|m| (1.0 / m).sqrt());
    let mut current = PhasePoint::new(target, init.clone(), DVector::zeros(dim))?;
    if !current.is_finite() {
        return Err(Error::Diverged("log density is not finite at the initial state".into()));
    }

    let adapt = cfg.adapt_step_size && cfg.burn_in > 0;
    let mut averaging = DualAveraging::new(cfg.step_size, cfg.target_accept);
    let mut eps = cfg.step_size;
    let mut stats = HmcStats::default();
    let mut samples = Vec::with_capacity(k);

    for iter in 0..cfg.burn_in + k {
        let sampling = iter >= cfg.burn_in;
        if sampling && iter == cfg.burn_in && adapt {
            eps = averaging.final_step_size();
        }
        current.momentum = standard_normal_vector(dim, rng).component_mul(&mass_sd);
        let h0 = current.hamiltonian(&inv_mass);
        let proposal = leapfrog(target, &current, eps, cfg.leapfrog_steps, &inv_mass)?;
        let h1 = proposal.hamiltonian(&inv_mass);
        let accept_prob = if proposal.is_finite() && h1.is_finite() {
            (h0 - h1).exp().min(1.0)
        } else {
            0.0
        };
        let divergent = !(proposal.is_finite() && h1.is_finite()) || h1 - h0 > 1000.0;
        let u: f64 = rng.random();
        let accepted = !divergent && u < accept_prob;
        if accepted {
            current = proposal;
        }
        if sampling {
            stats.proposals += 1;
            stats.accepted += accepted as usize;
            stats.divergences += divergent as usize;
            samples.push(current.position.clone());
        } else if adapt {
            eps = averaging.update(accept_prob);
        }
    }
    if stats.divergences == stats.proposals {
        return Err(Error::Diverged(format!(
            "all {} post-burn-in trajectories diverged (step size {eps:e})",
            stats.proposals
        )));
    }
    stats.step_size = eps;
    Ok((samples, stats, current.position))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub mc_samples: usize,
    /// Learning rate at iteration `t` is `learning_rate / (1 + t / decay_steps)`.
    pub decay_steps: f64,
    pub init_log_std: f64,
    /// Fraction of final iterates averaged into the returned `λ`.
    pub average_tail: f64,
}

impl Default for ViConfig {
    fn default() -> Self {
        ViConfig {
            iterations: 2000,
            learning_rate: 0.05,
            mc_samples: 8,
            decay_steps: 200.0,
            init_log_std: -1.0,
            average_tail: 0.5,
        }
    }
}

/// Mean-field Gaussian `q(W) = N(μ, diag(exp(2ρ)))` plus Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ViState {
    pub mean: DVector<f64>,
    pub log_std: DVector<f64>,
    first_moment: DVector<f64>,
    second_moment: DVector<f64>,
    steps: u64,
    pub elbo_trace: Vec<f64>,
}

impl ViState {
    pub fn new(mean: DVector<f64>, log_std: DVector<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::dims(mean.len(), log_std.len(), "variational log std"));
        }
        let n = 2 * mean.len();
        Ok(ViState {
            mean,
            log_std,
            first_moment: DVector::zeros(n),
            second_moment: DVector::zeros(n),
            steps: 0,
            elbo_trace: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> DVector<f64> {
        self.log_std.map(f64::exp)
    }

    /// Clears optimizer moments and the trace, keeping `λ`.
    pub fn restart(&mut self) {
        self.first_moment.fill(0.0);
        self.second_moment.fill(0.0);
        self.steps = 0;
        self.elbo_trace.clear();
    }
}

/// Stochastic gradient ascent on the ELBO with reparameterized draws
/// `W = μ + σ ⊙ ξ` and Adam updates. The recorded ELBO drops the constant
/// entropy term.
pub fn vi_fit<T, R>(target: &T, init: ViState, cfg: &ViConfig, rng: &mut R) -> Result<ViState>
where
    T: LogDensity + ?Sized,
    R: Rng + ?Sized,
{
    let dim = target.dim();
    if init.dim() != dim {
        return Err(Error::dims(dim, init.dim(), "variational parameters"));
    }
    if cfg.mc_samples == 0 {
        return Err(Error::InvalidConfig("VI needs at least one Monte Carlo sample".into()));
    }
    if !(cfg.learning_rate > 0.0) || !(cfg.decay_steps > 0.0) {
        return Err(Error::InvalidConfig("VI learning rate and decay must be > 0".into()));
    }
    let (b1, b2, tiny): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    if !(0.0..=1.0).contains(&cfg.average_tail) {
        return Err(Error::InvalidConfig("average_tail must lie in [0, 1]".into()));
    }
    let mut st = init;
    let s = cfg.mc_samples as f64;
    let average_start = cfg.iterations - (cfg.average_tail * cfg.iterations as f64).round() as usize;
    let mut avg_mean = DVector::zeros(dim);
    let mut avg_log_std = DVector::zeros(dim);
    let mut averaged = 0.0;
    for t in 0..cfg.iterations {
        let sigma = st.std();
        let mut g_mean = DVector::zeros(dim);
        let mut g_rho = DVector::zeros(dim);
        let mut elbo = 0.0;
        for _ in 0..cfg.mc_samples {
            let xi = standard_normal_vector(dim, rng);
            let w = &st.mean + sigma.component_mul(&xi);
            let (lp, g) = target.log_density_and_gradient(&w)?;
            elbo += lp / s;
            g_rho += g.component_mul(&sigma).component_mul(&xi) / s;
            g_mean += g / s;
        }
        elbo += st.log_std.sum();
        g_rho.add_scalar_mut(1.0);
        if !elbo.is_finite() || g_mean.iter().chain(g_rho.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!(
                "ELBO became non-finite at iteration {t} (trace length {})",
                st.elbo_trace.len()
            )));
        }
        st.elbo_trace.push(elbo);

        st.steps += 1;
        let lr = cfg.learning_rate / (1.0 + t as f64 / cfg.decay_steps);
        let bias1 = 1.0 - b1.powi(st.steps as i32);
        let bias2 = 1.0 - b2.powi(st.steps as i32);
        for i in 0..2 * dim {
            let g = if i < dim { g_mean[i] } else { g_rho[i - dim] };
            st.first_moment[i] = b1 * st.first_moment[i] + (1.0 - b1) * g;
            st.second_moment[i] = b2 * st.second_moment[i] + (1.0 - b2) * g * g;
            let step = lr * (st.first_moment[i] / bias1) / ((st.second_moment[i] / bias2).sqrt() + tiny);
            if i < dim {
                st.mean[i] += step;
            } else {
                st.log_std[i - dim] += step;
            }
        }
        if t >= average_start {
            averaged += 1.0;
            avg_mean += (&st.mean - &avg_mean) / averaged;
            avg_log_std += (&st.log_std - &avg_log_std) / averaged;
        }
    }
    if averaged > 0.0 {
        st.mean = avg_mean;
        st.log_std = avg_log_std;
    }
    Ok(st)
}

pub fn vi_sample<R: Rng + ?Sized>(state: &ViState, k: usize, round: u64, rng: &mut R) -> Result<PosteriorSampleSet> {
    check_k(k)?;
    if state.mean.iter().chain(state.log_std.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("variational parameters".into()));
    }
    let sigma = state.std();
    let samples = (0..k)
        .map(|_| &state.mean + sigma.component_mul(&standard_normal_vector(state.dim(), rng)))
        .collect();
    PosteriorSampleSet::new(samples, Provenance::Vi, round)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerConfig {
    Exact,
    Hmc(HmcConfig),
    Vi(ViConfig),
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::Exact
    }
}

/// One row of `sampler.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    pub round: u64,
    pub sampler: Provenance,
    pub acceptance_rate: Option<f64>,
    pub step_size: Option<f64>,
    pub divergences: Option<usize>,
    pub final_elbo: Option<f64>,
}

/// Draws a fresh sample set each round, warm-starting HMC chains and
/// variational parameters from the previous round. With
/// `refresh_every > 1`, HMC and VI reuse the last sample set between
/// refreshes.
#[derive(Debug, Clone)]
pub struct PosteriorEngine {
    config: SamplerConfig,
    refresh_every: u64,
    chain: Option<HmcChain>,
    vi: Option<ViState>,
    cached: Option<PosteriorSampleSet>,
    draws: u64,
    diagnostics: Vec<SamplerDiagnostics>,
    elbo_traces: Vec<(u64, Vec<f64>)>,
}

impl PosteriorEngine {
    pub fn new(config: SamplerConfig, refresh_every: u64) -> Self {
        PosteriorEngine {
            config,
            refresh_every: refresh_every.max(1),
            chain: None,
            vi: None,
            cached: None,
            draws: 0,
            diagnostics: Vec::new(),
            elbo_traces: Vec::new(),
        }
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn diagnostics(&self) -> &[SamplerDiagnostics] {
        &self.diagnostics
    }

    pub fn draw<R: Rng + ?Sized>(
        &mut self,
        target: &SurrogateTarget<'_>,
        k: usize,
        round: u64,
        rng: &mut R,
    ) -> Result<PosteriorSampleSet> {
        let due = self.draws % self.refresh_every == 0;
        self.draws += 1;
        if let (false, Some(cached), false) = (due, &self.cached, matches!(self.config, SamplerConfig::Exact)) {
            let mut reused = cached.clone();
            reused.round = round;
            return Ok(reused);
        }
        let dim = target.dim();
        let set = match &self.config {
            SamplerConfig::Exact => {
                let post = blr_exact_posterior(target)?;
                let set = exact_gaussian_sample(&post, k, round, rng)?;
                self.diagnostics.push(SamplerDiagnostics {
                    round,
                    sampler: Provenance::Exact,
                    acceptance_rate: None,
                    step_size: None,
                    divergences: None,
                    final_elbo: None,
                });
                set
            }
            SamplerConfig::Hmc(cfg) => {
                let (init, eps) = match &self.chain {
                    Some(c) if c.position.len() == dim => (c.position.clone(), c.step_size),
                    _ => (DVector::zeros(dim), cfg.step_size),
                };
                let mut run_cfg = cfg.clone();
                run_cfg.step_size = eps;
                let (samples, stats, last) = hmc_run(target, &init, &run_cfg, k, rng)?;
                self.chain = Some(HmcChain {
                    position: last,
                    step_size: stats.step_size,
                });
                self.diagnostics.push(SamplerDiagnostics {
                    round,
                    sampler: Provenance::Hmc,
                    acceptance_rate: Some(stats.acceptance_rate()),
                    step_size: Some(stats.step_size),
                    divergences: Some(stats.divergences),
                    final_elbo: None,
                });
                PosteriorSampleSet::new(samples, Provenance::Hmc, round)?
            }
            SamplerConfig::Vi(cfg) => {
                let init = match self.vi.take() {
                    Some(mut s) if s.dim() == dim => {
                        s.restart();
                        s
                    }
                    _ => ViState::new(DVector::zeros(dim), DVector::from_element(dim, cfg.init_log_std))?,
                };
                let state = vi_fit(target, init, cfg, rng)?;
                let set = vi_sample(&state, k, round, rng)?;
                self.diagnostics.push(SamplerDiagnostics {
                    round,
                    sampler: Provenance::Vi,
                    acceptance_rate: None,
                    step_size: None,
                    divergences: None,
                    final_elbo: state.elbo_trace.last().copied(),
                });
                self.elbo_traces.push((round, state.elbo_trace.clone()));
                self.vi = Some(state);
                set
            }
        };
        self.cached = Some(set.clone());
        Ok(set)
    }

    pub fn write_diagnostics_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.diagnostics {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long-format ELBO traces: `round,iteration,elbo`.
    pub fn write_elbo_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["round", "iteration", "elbo"])?;
        for (round, trace) in &self.elbo_traces {
            for (i, e) in trace.iter().enumerate() {
                w.write_record([round.to_string(), i.to_string(), e.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
