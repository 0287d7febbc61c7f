//! Projection stochastic kriging over the continuous latent space.
//!
//! The kernel is `K(X, X′) = Ã(X)ᵀ Ã(X′)` for a learned map
//! `Ã: ℝ^D̃ → ℝ^{D*}`, fitted by maximizing the Gaussian log-likelihood of
//! the per-point mean scores. The fitted model predicts anywhere in the
//! latent box and drives an expected-improvement search for additional
//! evaluations.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::candidates::{CandidateSet, LatentBox, LatentVector};
use crate::error::{Error, Result};
use crate::ledger::ObservationLog;
use crate::linalg::{cholesky_with_jitter, log_det, normal_cdf, normal_pdf};
use crate::scoring::LatentOracle;
use crate::search::{PerturbationSampler, Ridge};
use crate::selection::{fit_variance_model, with_retry, RetryPolicy, VarianceModel};
use crate::surrogate::Activation;

/// Relative jitter added to the kernel diagonal in the likelihood.
pub const LIKELIHOOD_JITTER: f64 = 1e-8;

/// Fully connected map `D̃ → … → D*` with a linear output layer.
///
/// Parameters are stored flat, layer by layer: the row-major weight matrix
/// followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMap {
    widths: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

struct Pass {
    /// Layer inputs, `activations[0]` being the data.
    activations: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

impl ProjectionMap {
    /// Zero-initialized map.
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig(format!(
                "projection widths need an input and an output layer, all >= 1; got {widths:?}"
            )));
        }
        let count = widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        Ok(ProjectionMap {
            widths,
            activation,
            params: vec![0.0; count],
        })
    }

    /// Gaussian initialization with variance `1 / fan_in` for hidden layers
    /// and `output_scale² / fan_in` for the output layer; zero biases.
    pub fn random<R: Rng + ?Sized>(
        widths: Vec<usize>,
        activation: Activation,
        output_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut map = Self::new(widths, activation)?;
        let layers = map.widths.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (fan_in, out) = (map.widths[l], map.widths[l + 1]);
            let sd = if l + 1 == layers { output_scale } else { 1.0 } / (fan_in as f64).sqrt();
            for p in &mut map.params[off..off + out * fan_in] {
                let e: f64 = rng.sample(StandardNormal);
                *p = sd * e;
            }
            off += out * (fan_in + 1);
        }
        Ok(map)
    }

    /// Single linear layer `X ↦ A X` without bias.
    pub fn linear(matrix: &DMatrix<f64>) -> Self {
        let (out, inp) = matrix.shape();
        let mut params: Vec<f64> = matrix.transpose().as_slice().to_vec();
        params.extend(std::iter::repeat(0.0).take(out));
        ProjectionMap {
            widths: vec![inp, out],
            activation: Activation::Identity,
            params,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::dims(self.params.len(), params.len(), "projection parameters"));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn layer(&self, l: usize, off: usize) -> (DMatrix<f64>, DVector<f64>) {
        let (inp, out) = (self.widths[l], self.widths[l + 1]);
        let w = DMatrix::from_row_slice(out, inp, &self.params[off..off + out * inp]);
        let b = DVector::from_column_slice(&self.params[off + out * inp..off + out * (inp + 1)]);
        (w, b)
    }

    fn forward(&self, xs: DMatrix<f64>) -> Pass {
        let layers = self.widths.len() - 1;
        let mut activations = vec![xs];
        let mut pre = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            let (w, b) = self.layer(l, off);
            off += w.len() + b.len();
            let mut z = &activations[l] * w.transpose();
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            if l + 1 < layers {
                let act = self.activation;
                activations.push(z.map(|v| act.apply(v)));
            }
            pre.push(z);
        }
        Pass { activations, pre }
    }

    /// Rows are `Ã(X_n)ᵀ` for the rows `X_nᵀ` of `xs`.
    pub fn apply_batch(&self, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if xs.ncols() != self.input_dim() {
            return Err(Error::dims(self.input_dim(), xs.ncols(), "latent dimension"));
        }
        Ok(self.forward(xs.clone()).pre.pop().expect("one layer at least"))
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let out = self.apply_batch(&DMatrix::from_row_slice(1, x.len(), x.as_slice()))?;
        Ok(out.row(0).transpose())
    }

    /// Gradient of `Σ_n ⟨d_out[n], Ã(X_n)⟩` with respect to the parameters.
    fn backward(&self, pass: &Pass, d_out: DMatrix<f64>) -> Vec<f64> {
        let layers = self.widths.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.widths[l + 1] * (self.widths[l] + 1);
        }
        let mut delta = d_out;
        for l in (0..layers).rev() {
            let (w, _) = self.layer(l, offsets[l]);
            let dw = delta.transpose() * &pass.activations[l];
            let (inp, out) = (self.widths[l], self.widths[l + 1]);
            let o = offsets[l];
            for r in 0..out {
                for c in 0..inp {
                    grad[o + r * inp + c] = dw[(r, c)];
                }
                grad[o + out * inp + r] = delta.column(r).sum();
            }
            if l > 0 {
                let mut back = &delta * &w;
                let act = self.activation;
                back.zip_apply(&pass.pre[l - 1], |d, p| *d *= act.derivative(p));
                delta = back;
            }
        }
        grad
    }

    /// Largest `‖Ã(X)‖` over `samples` uniform probes of the box and its
    /// corners along each axis.
    pub fn probe_norm_bound<R: Rng + ?Sized>(&self, latent_box: LatentBox, samples: usize, rng: &mut R) -> f64 {
        let d = self.input_dim();
        let mut rows: Vec<Vec<f64>> = (0..samples)
            .map(|_| (0..d).map(|_| rng.random_range(latent_box.lower..=latent_box.upper)).collect())
            .collect();
        rows.push(vec![latent_box.lower; d]);
        rows.push(vec![latent_box.upper; d]);
        let xs = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        let out = self.forward(xs).pre.pop().expect("one layer at least");
        out.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
    }
}

/// Training data for the PSK likelihood: one row per distinct latent point.
#[derive(Debug, Clone, PartialEq)]
pub struct PskData {
    pub inputs: Vec<DVector<f64>>,
    /// `v̄_n`.
    pub means: Vec<f64>,
    /// `r_n`.
    pub counts: Vec<f64>,
    /// `σ²_ε(X_n)`, before division by `r_n`.
    pub noise: Vec<f64>,
    /// Highest single observation at each point.
    pub best_scores: Vec<f64>,
}

impl PskData {
    pub fn new(inputs: Vec<DVector<f64>>, means: Vec<f64>, counts: Vec<f64>, noise: Vec<f64>) -> Result<Self> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::InsufficientData("PSK needs at least one point".into()));
        }
        for (len, what) in [(means.len(), "means"), (counts.len(), "counts"), (noise.len(), "noise")] {
            if len != n {
                return Err(Error::dims(n, len, what));
            }
        }
        let dim = inputs[0].len();
        if let Some(x) = inputs.iter().find(|x| x.len() != dim) {
            return Err(Error::dims(dim, x.len(), "latent point"));
        }
        if counts.iter().any(|&r| !(r >= 1.0)) {
            return Err(Error::InvalidConfig("replication counts must be >= 1".into()));
        }
        if noise.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("noise variances must be > 0".into()));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("mean score".into()));
        }
        let best_scores = means.clone();
        Ok(PskData {
            inputs,
            means,
            counts,
            noise,
            best_scores,
        })
    }

    /// Aggregates raw scores per point, dropping points without scores;
    /// `σ²_ε` comes from `noise_model`.
    pub fn from_observations(
        points: &[DVector<f64>],
        scores: &[Vec<f64>],
        noise_model: &VarianceModel,
    ) -> Result<Self> {
        if points.len() != scores.len() {
            return Err(Error::dims(points.len(), scores.len(), "scores per point"));
        }
        let mut inputs = Vec::new();
        let (mut means, mut counts, mut noise, mut best) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (x, s) in points.iter().zip(scores) {
            if s.is_empty() {
                continue;
            }
            inputs.push(x.clone());
            means.push(s.iter().sum::<f64>() / s.len() as f64);
            counts.push(s.len() as f64);
            noise.push(noise_model.predict(x));
            best.push(s.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        let mut data = Self::new(inputs, means, counts, noise)?;
        data.best_scores = best;
        Ok(data)
    }

    /// Data from a finished selection run, on the candidates' latent
    /// vectors. `σ²_ε` is fitted over the latent space from the sample
    /// variances of candidates evaluated at least twice.
    pub fn from_run(candidates: &CandidateSet, log: &ObservationLog, floor: f64) -> Result<(Self, VarianceModel)> {
        let (points, scores) = run_observations(candidates, log)?;
        let (mut var_points, mut vars) = (Vec::new(), Vec::new());
        for (x, s) in points.iter().zip(&scores) {
            if s.len() >= 2 {
                let m = s.iter().sum::<f64>() / s.len() as f64;
                vars.push(s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (s.len() as f64 - 1.0));
                var_points.push(x.clone());
            }
        }
        if vars.is_empty() {
            return Err(Error::InsufficientData(
                "no latent point was evaluated twice; cannot estimate observation variance".into(),
            ));
        }
        let noise_model = fit_variance_model(&var_points, &vars, floor)?;
        Ok((Self::from_observations(&points, &scores, &noise_model)?, noise_model))
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    fn design(&self) -> DMatrix<f64> {
        stack_rows(&self.inputs)
    }

    fn noise_diagonal(&self) -> Vec<f64> {
        self.noise.iter().zip(&self.counts).map(|(s, r)| s / r).collect()
    }
}

/// Latent points and raw scores per candidate from a run.
pub fn run_observations(candidates: &CandidateSet, log: &ObservationLog) -> Result<(Vec<DVector<f64>>, Vec<Vec<f64>>)> {
    if log.num_candidates() != candidates.len() {
        return Err(Error::dims(candidates.len(), log.num_candidates(), "log candidates"));
    }
    let points = (0..candidates.len())
        .map(|n| candidates.latent_of(n).as_dvector())
        .collect();
    let scores = (0..candidates.len()).map(|n| log.scores_of(n).collect()).collect();
    Ok((points, scores))
}

fn stack_rows(points: &[DVector<f64>]) -> DMatrix<f64> {
    let d = points.first().map_or(0, |p| p.len());
    DMatrix::from_fn(points.len(), d, |i, j| points[i][j])
}

struct LikelihoodParts {
    value: f64,
    grad_features: Option<DMatrix<f64>>,
}

fn likelihood_parts(features: &DMatrix<f64>, data: &PskData, with_grad: bool) -> Result<LikelihoodParts> {
    let n = data.len();
    let k = features * features.transpose();
    let jitter = LIKELIHOOD_JITTER * k.trace() / n as f64;
    let mut c = k;
    for (i, s) in data.noise_diagonal().into_iter().enumerate() {
        c[(i, i)] += s + jitter;
    }
    let ch = cholesky_with_jitter(&c, 0.0)?;
    let y = DVector::from_column_slice(&data.means);
    let alpha = ch.solve(&y);
    let value = -0.5 * log_det(&ch) - 0.5 * y.dot(&alpha);
    if !value.is_finite() {
        return Err(Error::NonFinite("PSK log-likelihood".into()));
    }
    let grad_features = with_grad.then(|| {
        let g = (&alpha * alpha.transpose() - ch.inverse()) * 0.5;
        let jitter_coef = g.trace() * 2.0 * LIKELIHOOD_JITTER / n as f64;
        &g * features * 2.0 + features * jitter_coef
    });
    Ok(LikelihoodParts { value, grad_features })
}

/// `ℓ = −½ ln|K_N + Σ_ε| − ½ V̄ᵀ (K_N + Σ_ε)⁻¹ V̄` with `1e-8 ×` the mean
/// kernel diagonal added as jitter.
pub fn psk_log_likelihood(map: &ProjectionMap, data: &PskData) -> Result<f64> {
    let features = map.apply_batch(&data.design())?;
    Ok(likelihood_parts(&features, data, false)?.value)
}

/// Log-likelihood and its gradient with respect to [`ProjectionMap::params`].
pub fn psk_log_likelihood_and_gradient(map: &ProjectionMap, data: &PskData) -> Result<(f64, Vec<f64>)> {
    if data.input_dim() != map.input_dim() {
        return Err(Error::dims(map.input_dim(), data.input_dim(), "latent dimension"));
    }
    let pass = map.forward(data.design());
    let features = pass.pre.last().expect("one layer at least");
    let parts = likelihood_parts(features, data, true)?;
    let grad = map.backward(&pass, parts.grad_features.expect("requested"));
    Ok((parts.value, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PskFitConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub starts: usize,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for PskFitConfig {
    fn default() -> Self {
        PskFitConfig {
            hidden: vec![128],
            activation: Activation::Tanh,
            starts: 4,
            iterations: 300,
            learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PskFit {
    pub map: ProjectionMap,
    pub log_likelihood: f64,
    pub best_start: usize,
    /// Log-likelihood per iteration, per start.
    pub traces: Vec<Vec<f64>>,
}

/// Multi-start Adam ascent on the log-likelihood; keeps the best iterate
/// seen across all starts.
pub fn psk_fit<R: Rng + ?Sized>(data: &PskData, output_dim: usize, cfg: &PskFitConfig, rng: &mut R) -> Result<PskFit> {
    if output_dim == 0 {
        return Err(Error::InvalidConfig("D* must be >= 1".into()));
    }
    if cfg.starts == 0 {
        return Err(Error::InvalidConfig("PSK fit needs at least one start".into()));
    }
    let mut widths = vec![data.input_dim()];
    widths.extend(&cfg.hidden);
    widths.push(output_dim);
    let rms = (data.means.iter().map(|v| v * v).sum::<f64>() / data.len() as f64).sqrt();
    let hidden_gain = if cfg.hidden.is_empty() { 1.0 } else { 0.5 };
    let output_scale = (rms.max(1e-3) / (output_dim as f64 * hidden_gain).sqrt()).max(1e-3);
    let mut best: Option<(f64, usize, ProjectionMap)> = None;
    let mut traces = Vec::with_capacity(cfg.starts);
    for start in 0..cfg.starts {
        let mut map = ProjectionMap::random(widths.clone(), cfg.activation, output_scale, rng)?;
        let mut trace = Vec::with_capacity(cfg.iterations);
        let mut adam = Adam::new(map.params.len(), cfg.learning_rate);
        for _ in 0..=cfg.iterations {
            let (value, grad) = match psk_log_likelihood_and_gradient(&map, data) {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("PSK start {start} stopped: {e}");
                    break;
                }
            };
            trace.push(value);
            if best.as_ref().map_or(true, |(b, _, _)| value > *b) {
                best = Some((value, start, map.clone()));
            }
            if grad.iter().any(|g| !g.is_finite()) {
                log::warn!("PSK start {start} stopped: non-finite gradient");
                break;
            }
            adam.ascend(&mut map.params, &grad);
        }
        traces.push(trace);
    }
    let (log_likelihood, best_start, map) = best.ok_or_else(|| {
        Error::Diverged(format!("every PSK start failed; traces {:?}", traces.iter().map(Vec::len).collect::<Vec<_>>()))
    })?;
    Ok(PskFit {
        map,
        log_likelihood,
        best_start,
        traces,
    })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            params[i] += self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone)]
struct Posterior {
    /// `Φᵀ C⁻¹ Φ`.
    m: DMatrix<f64>,
    /// `Φᵀ C⁻¹ y`.
    beta: DVector<f64>,
}

/// A fitted PSK predictor over the training points plus any additional
/// evaluations.
#[derive(Debug, Clone)]
pub struct PskModel {
    map: ProjectionMap,
    data: PskData,
    noise_model: VarianceModel,
    extra_inputs: Vec<DVector<f64>>,
    extra_scores: Vec<f64>,
    extra_noise: Vec<f64>,
    posterior: Posterior,
}

impl PskModel {
    pub fn new(map: ProjectionMap, data: PskData, noise_model: VarianceModel) -> Result<Self> {
        if data.input_dim() != map.input_dim() {
            return Err(Error::dims(map.input_dim(), data.input_dim(), "latent dimension"));
        }
        let d = map.output_dim();
        let mut model = PskModel {
            map,
            data,
            noise_model,
            extra_inputs: Vec::new(),
            extra_scores: Vec::new(),
            extra_noise: Vec::new(),
            posterior: Posterior {
                m: DMatrix::zeros(d, d),
                beta: DVector::zeros(d),
            },
        };
        model.refresh()?;
        Ok(model)
    }

    pub fn map(&self) -> &ProjectionMap {
        &self.map
    }

    pub fn data(&self) -> &PskData {
        &self.data
    }

    pub fn noise_model(&self) -> &VarianceModel {
        &self.noise_model
    }

    /// The additional points `X̃_i` and their scores `ṽ_i`.
    pub fn additional(&self) -> (&[DVector<f64>], &[f64]) {
        (&self.extra_inputs, &self.extra_scores)
    }

    /// Appends one additional evaluation (replication 1, noise
    /// `σ²_ε(X̃)`) and refactorizes.
    pub fn append(&mut self, x: DVector<f64>, score: f64) -> Result<()> {
        if x.len() != self.map.input_dim() {
            return Err(Error::dims(self.map.input_dim(), x.len(), "latent point"));
        }
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("score {score}")));
        }
        self.extra_noise.push(self.noise_model.predict(&x));
        self.extra_inputs.push(x);
        self.extra_scores.push(score);
        if let Err(e) = self.refresh() {
            self.extra_inputs.pop();
            self.extra_scores.pop();
            self.extra_noise.pop();
            self.refresh()?;
            return Err(e);
        }
        Ok(())
    }

    fn refresh(&mut self) -> Result<()> {
        let mut points = self.data.inputs.clone();
        points.extend(self.extra_inputs.iter().cloned());
        let phi = self.map.apply_batch(&stack_rows(&points))?;
        let mut c = &phi * phi.transpose();
        let noise = self.data.noise_diagonal().into_iter().chain(self.extra_noise.iter().copied());
        for (i, s) in noise.enumerate() {
            c[(i, i)] += s;
        }
        let ch = cholesky_with_jitter(&c, 0.0)?;
        let y = DVector::from_iterator(
            points.len(),
            self.data.means.iter().chain(&self.extra_scores).copied(),
        );
        let solved = ch.solve(&phi);
        let m = phi.transpose() * &solved;
        self.posterior = Posterior {
            m: (&m + m.transpose()) * 0.5,
            beta: solved.transpose() * y,
        };
        Ok(())
    }

    /// `(μ̂(X), σ̂²(X))`. Negative variances from rounding are clamped to
    /// zero.
    pub fn predict(&self, x: &DVector<f64>) -> Result<(f64, f64)> {
        let a = self.map.apply(x)?;
        Ok(self.predict_features(&a))
    }

    fn predict_features(&self, a: &DVector<f64>) -> (f64, f64) {
        let mean = a.dot(&self.posterior.beta);
        let prior = a.norm_squared();
        let var = prior - (self.posterior.m.clone() * a).dot(a);
        if var < -1e-8 * prior.max(1.0) {
            log::debug!("PSK variance {var:e} below tolerance; clamped");
        }
        (mean, var.max(0.0))
    }

    /// Batched predictions for the rows of `xs`.
    pub fn predict_batch(&self, xs: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
        let phi = self.map.apply_batch(xs)?;
        Ok(phi.row_iter().map(|r| self.predict_features(&r.transpose())).collect())
    }

    /// Best single observation so far and where it was made.
    pub fn best_observed(&self) -> (DVector<f64>, f64) {
        let mut best = (self.data.inputs[0].clone(), self.data.best_scores[0]);
        let all = self
            .data
            .inputs
            .iter()
            .zip(&self.data.best_scores)
            .chain(self.extra_inputs.iter().zip(&self.extra_scores));
        for (x, &v) in all {
            if v > best.1 {
                best = (x.clone(), v);
            }
        }
        best
    }
}

/// Holdout RMSE of one candidate `D*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionScore {
    pub dim: usize,
    pub rmse: f64,
}

/// Lowest RMSE; ties go to the smallest dimension.
pub fn pick_dimension(scores: &[DimensionScore]) -> Option<usize> {
    let mut sorted = scores.to_vec();
    sorted.sort_by_key(|s| s.dim);
    let mut best: Option<DimensionScore> = None;
    for s in sorted {
        if best.map_or(true, |b| s.rmse < b.rmse) {
            best = Some(s);
        }
    }
    best.map(|b| b.dim)
}

/// Cross-validated choice of `D*`: a random `train_fraction` of the raw
/// observations trains a PSK model per candidate dimension; the rest
/// measures prediction RMSE against the observed scores.
pub fn psk_select_dimension<R: Rng + ?Sized>(
    points: &[DVector<f64>],
    scores: &[Vec<f64>],
    noise_model: &VarianceModel,
    dims: &[usize],
    train_fraction: f64,
    cfg: &PskFitConfig,
    rng: &mut R,
) -> Result<(usize, Vec<DimensionScore>)> {
    if dims.is_empty() {
        return Err(Error::InvalidConfig("no candidate dimensions".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    if points.len() != scores.len() {
        return Err(Error::dims(points.len(), scores.len(), "scores per point"));
    }
    let mut flat: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.iter().map(move |&v| (i, v)))
        .collect();
    flat.shuffle(rng);
    let cut = (train_fraction * flat.len() as f64).round() as usize;
    let (train, holdout) = flat.split_at(cut.min(flat.len()));
    if holdout.is_empty() || train.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} observations leave an empty training or holdout part",
            flat.len()
        )));
    }
    let mut train_scores = vec![Vec::new(); points.len()];
    for &(i, v) in train {
        train_scores[i].push(v);
    }
    let data = PskData::from_observations(points, &train_scores, noise_model)?;
    let mut dims = dims.to_vec();
    dims.sort_unstable();
    dims.dedup();
    let mut results = Vec::with_capacity(dims.len());
    for &dim in &dims {
        let fit = psk_fit(&data, dim, cfg, rng)?;
        let model = PskModel::new(fit.map, data.clone(), noise_model.clone())?;
        let mut se = 0.0;
        for &(i, v) in holdout {
            let (mu, _) = model.predict(&points[i])?;
            se += (mu - v).powi(2);
        }
        results.push(DimensionScore {
            dim,
            rmse: (se / holdout.len() as f64).sqrt(),
        });
    }
    let dim = pick_dimension(&results).expect("dims is non-empty");
    Ok((dim, results))
}

/// `(μ − v*) Φ(z) + σ φ(z)` with `z = (μ − v*) / σ`; `max(μ − v*, 0)` when
/// `σ = 0`.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let gap = mean - best;
    let sd = variance.max(0.0).sqrt();
    if sd == 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sd;
    (gap * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Additional evaluations `I`.
    pub budget: usize,
    pub local_proposals: usize,
    pub uniform_proposals: usize,
    pub latent_box: LatentBox,
    pub ridge: Ridge,
    pub retry: RetryPolicy,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            budget: 0,
            local_proposals: 512,
            uniform_proposals: 512,
            latent_box: LatentBox::default(),
            ridge: Ridge::default(),
            retry: RetryPolicy::default(),
        }
    }
}

/// One row of the refinement trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineRow {
    pub i: usize,
    pub point_hash: String,
    pub ei: f64,
    pub score: f64,
    pub variance_before: f64,
    pub cumulative_uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub best_point: DVector<f64>,
    pub best_score: f64,
    /// `U_1, …, U_I`.
    pub cumulative_uncertainty: Vec<f64>,
    pub rows: Vec<RefineRow>,
}

impl RefineOutcome {
    /// `U_I`, zero when no evaluation was made.
    pub fn total_uncertainty(&self) -> f64 {
        self.cumulative_uncertainty.last().copied().unwrap_or(0.0)
    }
}

/// FNV-1a over the coordinate bit patterns, as 16 hex digits.
pub fn point_hash(x: &DVector<f64>) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in x.iter() {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

/// Spends `cfg.budget` evaluations at EI maximizers over fresh proposal
/// batches, appending each to `model`. Proposals are perturbations of the
/// current best point (covariance of the training points) plus uniform
/// draws from the box.
pub fn refine_search<O, R>(model: &mut PskModel, cfg: &RefineConfig, oracle: &mut O, rng: &mut R) -> Result<RefineOutcome>
where
    O: LatentOracle + ?Sized,
    R: Rng + ?Sized,
{
    if cfg.budget > 0 && cfg.local_proposals + cfg.uniform_proposals == 0 {
        return Err(Error::InvalidConfig("refinement needs at least one proposal per round".into()));
    }
    let dim = model.map.input_dim();
    let bx = cfg.latent_box;
    let latents: Vec<LatentVector> = model
        .data
        .inputs
        .iter()
        .enumerate()
        .map(|(i, x)| LatentVector::new(i, x.as_slice().to_vec()))
        .collect();
    let sampler = if latents.len() >= 2 {
        PerturbationSampler::from_latents(&latents, cfg.ridge).ok()
    } else {
        None
    };
    let fallback_sd = 0.1 * (bx.upper - bx.lower);
    let (mut best_point, mut best_score) = model.best_observed();
    let mut cumulative = Vec::with_capacity(cfg.budget);
    let mut rows = Vec::with_capacity(cfg.budget);
    let mut u = 0.0;
    for i in 1..=cfg.budget {
        let total = cfg.local_proposals + cfg.uniform_proposals;
        let mut proposals = DMatrix::zeros(total, dim);
        for p in 0..total {
            let x: DVector<f64> = if p < cfg.local_proposals {
                let step = match &sampler {
                    Some(s) => s.sample(rng),
                    None => DVector::from_fn(dim, |_, _| fallback_sd * rng.sample::<f64, _>(StandardNormal)),
                };
                (&best_point + step).map(|v| v.clamp(bx.lower, bx.upper))
            } else {
                DVector::from_fn(dim, |_, _| rng.random_range(bx.lower..=bx.upper))
            };
            proposals.set_row(p, &x.transpose());
        }
        let preds = model.predict_batch(&proposals)?;
        let mut order: Vec<(usize, f64, f64)> = preds
            .iter()
            .enumerate()
            .map(|(p, &(mu, var))| (p, expected_improvement(mu, var, best_score), var))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let (chosen, ei, var) = order
            .iter()
            .map(|&(p, ei, var)| (proposals.row(p).transpose(), ei, var))
            .find(|(x, _, _)| !is_known(model, x))
            .ok_or_else(|| Error::InsufficientData("every proposal repeats an evaluated point".into()))?;
        let score = with_retry(&cfg.retry, &format!("latent point {}", point_hash(&chosen)), || {
            oracle.evaluate_latent(chosen.as_slice())
        })?;
        u += var;
        cumulative.push(u);
        rows.push(RefineRow {
            i,
            point_hash: point_hash(&chosen),
            ei,
            score,
            variance_before: var,
            cumulative_uncertainty: u,
        });
        model.append(chosen.clone(), score)?;
        if score > best_score {
            best_score = score;
            best_point = chosen;
        }
    }
    Ok(RefineOutcome {
        best_point,
        best_score,
        cumulative_uncertainty: cumulative,
        rows,
    })
}

fn is_known(model: &PskModel, x: &DVector<f64>) -> bool {
    model.data.inputs.iter().chain(&model.extra_inputs).any(|p| p == x)
}

pub fn write_refinement_csv<W: Write>(rows: &[RefineRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
