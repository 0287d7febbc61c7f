//! Bayesian parametric surrogates `f(z; W)` with a Gaussian prior on `W`:
//! linear models over a feature map (Bayesian linear regression and the
//! finite-rank Gaussian process) and a fully connected Bayesian neural
//! network.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::ObservationLog;
use crate::linalg::{cholesky_with_jitter, median_squared_distance, standard_normal_vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    Blr,
    FiniteRankGp,
    Bnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation.
    pub(crate) fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Explicit feature map `φ: ℝ^D → ℝ^p`.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Identity { dim: usize },
    /// `φ(z) = A z`.
    Linear(DMatrix<f64>),
    /// `φ(z) = √(2/p) · cos(Ω z + b)`; approximates `exp(-‖z - z'‖² / σ²)`
    /// when `Ω ~ N(0, 2/σ² · I)` and `b ~ U(0, 2π)`.
    RandomFourier {
        omega: DMatrix<f64>,
        offset: DVector<f64>,
    },
}

impl FeatureMap {
    pub fn random_fourier<R: Rng + ?Sized>(
        dim: usize,
        features: usize,
        bandwidth: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if features == 0 {
            return Err(Error::InvalidConfig("feature count must be >= 1".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidConfig(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        let scale = (2.0 / bandwidth).sqrt();
        let mut omega = DMatrix::zeros(features, dim);
        for r in 0..features {
            let row = standard_normal_vector(dim, rng) * scale;
            omega.set_row(r, &row.transpose());
        }
        let offset = DVector::from_iterator(
            features,
            (0..features).map(|_| rng.random::<f64>() * std::f64::consts::TAU),
        );
        Ok(FeatureMap::RandomFourier { omega, offset })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Linear(a) => a.ncols(),
            FeatureMap::RandomFourier { omega, .. } => omega.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Linear(a) => a.nrows(),
            FeatureMap::RandomFourier { omega, .. } => omega.nrows(),
        }
    }

    pub fn apply(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.input_dim() {
            return Err(Error::dims(self.input_dim(), z.len(), "feature map input"));
        }
        Ok(match self {
            FeatureMap::Identity { .. } => z.clone(),
            FeatureMap::Linear(a) => a * z,
            FeatureMap::RandomFourier { omega, offset } => {
                let p = omega.nrows() as f64;
                let s = (2.0 / p).sqrt();
                (omega * z + offset).map(|v| s * v.cos())
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Linear(FeatureMap),
    /// Layer widths `m_0 … m_{L+1}`; per layer the weight matrix is stored
    /// row-major followed by its bias.
    Network {
        widths: Vec<usize>,
        activation: Activation,
    },
}

/// Parametric form plus an independent `N(0, prior_scale²)` prior on every
/// parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSpec {
    kind: SurrogateKind,
    model: Model,
    prior_scale: f64,
}

impl SurrogateSpec {
    /// Bayesian linear regression with `φ(z) = z`.
    pub fn blr(dim: usize) -> Self {
        Self::linear(SurrogateKind::Blr, FeatureMap::Identity { dim })
    }

    pub fn linear(kind: SurrogateKind, map: FeatureMap) -> Self {
        SurrogateSpec {
            kind,
            model: Model::Linear(map),
            prior_scale: 1.0,
        }
    }

    pub fn finite_rank_gp(map: FeatureMap) -> Self {
        Self::linear(SurrogateKind::FiniteRankGp, map)
    }

    pub fn bnn(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig(format!("invalid layer widths {widths:?}")));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::InvalidConfig("network output width must be 1".into()));
        }
        Ok(SurrogateSpec {
            kind: SurrogateKind::Bnn,
            model: Model::Network { widths, activation },
            prior_scale: 1.0,
        })
    }

    pub fn with_prior_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("prior scale must be > 0, got {scale}")));
        }
        self.prior_scale = scale;
        Ok(self)
    }

    pub fn kind(&self) -> SurrogateKind {
        self.kind
    }

    pub fn prior_scale(&self) -> f64 {
        self.prior_scale
    }

    pub fn feature_map(&self) -> Option<&FeatureMap> {
        match &self.model {
            Model::Linear(m) => Some(m),
            Model::Network { .. } => None,
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.model {
            Model::Linear(m) => m.input_dim(),
            Model::Network { widths, .. } => widths[0],
        }
    }

    pub fn param_count(&self) -> usize {
        match &self.model {
            Model::Linear(m) => m.output_dim(),
            Model::Network { widths, .. } => widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum(),
        }
    }

    fn check(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::dims(self.param_count(), w.len(), "surrogate parameters"));
        }
        Ok(())
    }

    /// `f(z; W)`.
    pub fn forward(&self, w: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
        self.check(w)?;
        if z.len() != self.input_dim() {
            return Err(Error::dims(self.input_dim(), z.len(), "surrogate input"));
        }
        match &self.model {
            Model::Linear(m) => Ok(m.apply(z)?.dot(w)),
            Model::Network { widths, activation } => {
                let x = DMatrix::from_column_slice(z.len(), 1, z.as_slice());
                Ok(network_forward(widths, *activation, w, &x).output[0])
            }
        }
    }
}

struct NetworkPass {
    /// Layer inputs, `inputs[l]` is `m_l × B`.
    inputs: Vec<DMatrix<f64>>,
    /// Hidden pre-activations.
    pre: Vec<DMatrix<f64>>,
    output: DVector<f64>,
}

fn layer_params(widths: &[usize], w: &DVector<f64>) -> Vec<(DMatrix<f64>, DVector<f64>)> {
    let mut offset = 0;
    widths
        .windows(2)
        .map(|pair| {
            let (m_in, m_out) = (pair[0], pair[1]);
            let weight = DMatrix::from_row_slice(m_out, m_in, &w.as_slice()[offset..offset + m_out * m_in]);
            offset += m_out * m_in;
            let bias = DVector::from_column_slice(&w.as_slice()[offset..offset + m_out]);
            offset += m_out;
            (weight, bias)
        })
        .collect()
}

fn network_forward(widths: &[usize], act: Activation, w: &DVector<f64>, x: &DMatrix<f64>) -> NetworkPass {
    let layers = layer_params(widths, w);
    let mut inputs = vec![x.clone()];
    let mut pre = Vec::with_capacity(layers.len() - 1);
    let mut out = DVector::zeros(x.ncols());
    for (l, (weight, bias)) in layers.iter().enumerate() {
        let mut a = weight * inputs.last().unwrap();
        for mut col in a.column_iter_mut() {
            col += bias;
        }
        if l + 1 == layers.len() {
            out = a.row(0).transpose();
        } else {
            inputs.push(a.map(|v| act.apply(v)));
            pre.push(a);
        }
    }
    NetworkPass {
        inputs,
        pre,
        output: out,
    }
}

/// Gradient of `Σ_b c_b f(x_b; W)` with respect to `W`.
fn network_backward(
    widths: &[usize],
    act: Activation,
    w: &DVector<f64>,
    pass: &NetworkPass,
    c: &DVector<f64>,
) -> DVector<f64> {
    let layers = layer_params(widths, w);
    let mut grad = DVector::zeros(w.len());
    let mut offsets = Vec::with_capacity(layers.len());
    let mut off = 0;
    for pair in widths.windows(2) {
        offsets.push(off);
        off += pair[1] * pair[0] + pair[1];
    }
    let mut delta = DMatrix::from_row_slice(1, c.len(), c.as_slice());
    for l in (0..layers.len()).rev() {
        let (m_in, m_out) = (widths[l], widths[l + 1]);
        let gw = &delta * pass.inputs[l].transpose();
        let o = offsets[l];
        for r in 0..m_out {
            for k in 0..m_in {
                grad[o + r * m_in + k] = gw[(r, k)];
            }
            grad[o + m_out * m_in + r] = delta.row(r).sum();
        }
        if l > 0 {
            let mut back = layers[l].0.transpose() * &delta;
            back.zip_apply(&pass.pre[l - 1], |d, a| *d *= act.derivative(a));
            delta = back;
        }
    }
    grad
}

/// Serializable surrogate choice, resolved against the candidate inputs by
/// [`SurrogateConfig::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurrogateConfig {
    Blr {
        #[serde(default = "one")]
        prior_scale: f64,
    },
    FiniteRankGp {
        #[serde(default = "default_features")]
        features: usize,
        /// Defaults to the median pairwise squared distance of the inputs.
        #[serde(default)]
        bandwidth: Option<f64>,
        #[serde(default)]
        feature_seed: u64,
        #[serde(default = "one")]
        prior_scale: f64,
    },
    Bnn {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default)]
        activation: Activation,
        #[serde(default = "one")]
        prior_scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn default_features() -> usize {
    256
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig::Blr { prior_scale: 1.0 }
    }
}

impl SurrogateConfig {
    pub fn kind(&self) -> SurrogateKind {
        match self {
            SurrogateConfig::Blr { .. } => SurrogateKind::Blr,
            SurrogateConfig::FiniteRankGp { .. } => SurrogateKind::FiniteRankGp,
            SurrogateConfig::Bnn { .. } => SurrogateKind::Bnn,
        }
    }

    pub fn spec(&self, inputs: &[DVector<f64>]) -> Result<SurrogateSpec> {
        let dim = inputs
            .first()
            .map(|z| z.len())
            .ok_or_else(|| Error::InsufficientData("surrogate needs at least one input".into()))?;
        match self {
            SurrogateConfig::Blr { prior_scale } => SurrogateSpec::blr(dim).with_prior_scale(*prior_scale),
            SurrogateConfig::FiniteRankGp {
                features,
                bandwidth,
                feature_seed,
                prior_scale,
            } => {
                let bw = bandwidth.unwrap_or_else(|| median_squared_distance(inputs));
                let mut rng = ChaCha8Rng::seed_from_u64(*feature_seed);
                let map = FeatureMap::random_fourier(dim, *features, bw, &mut rng)?;
                SurrogateSpec::finite_rank_gp(map).with_prior_scale(*prior_scale)
            }
            SurrogateConfig::Bnn {
                hidden,
                activation,
                prior_scale,
            } => {
                let mut widths = vec![dim];
                widths.extend(hidden);
                widths.push(1);
                SurrogateSpec::bnn(widths, *activation)?.with_prior_scale(*prior_scale)
            }
        }
    }

    pub fn build(&self, inputs: &[DVector<f64>]) -> Result<Surrogate> {
        Surrogate::new(self.spec(inputs)?, inputs.to_vec())
    }
}

/// A spec bound to the fixed candidate inputs `z_1 … z_N`, with features
/// precomputed for linear models.
#[derive(Debug, Clone)]
pub struct Surrogate {
    spec: SurrogateSpec,
    inputs: Vec<DVector<f64>>,
    /// `N × p` for linear models, `D × N` inputs for networks.
    design: DMatrix<f64>,
}

impl Surrogate {
    pub fn new(spec: SurrogateSpec, inputs: Vec<DVector<f64>>) -> Result<Self> {
        let d = spec.input_dim();
        if let Some(z) = inputs.iter().find(|z| z.len() != d) {
            return Err(Error::dims(d, z.len(), "surrogate input"));
        }
        let design = match &spec.model {
            Model::Linear(map) => {
                let mut phi = DMatrix::zeros(inputs.len(), map.output_dim());
                for (n, z) in inputs.iter().enumerate() {
                    phi.set_row(n, &map.apply(z)?.transpose());
                }
                phi
            }
            Model::Network { .. } => {
                let mut x = DMatrix::zeros(d, inputs.len());
                for (n, z) in inputs.iter().enumerate() {
                    x.set_column(n, z);
                }
                x
            }
        };
        Ok(Surrogate { spec, inputs, design })
    }

    pub fn spec(&self) -> &SurrogateSpec {
        &self.spec
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// `N × p` feature matrix of a linear surrogate.
    pub fn features(&self) -> Option<&DMatrix<f64>> {
        match self.spec.model {
            Model::Linear(_) => Some(&self.design),
            Model::Network { .. } => None,
        }
    }

    /// `f(z_n; W)` for every candidate.
    pub fn predict(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.spec.check(w)?;
        Ok(match &self.spec.model {
            Model::Linear(_) => &self.design * w,
            Model::Network { widths, activation } => network_forward(widths, *activation, w, &self.design).output,
        })
    }

    /// `N × K` matrix of `f(z_n; Ŵ_k)`.
    pub fn predict_samples(&self, samples: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.len(), samples.len());
        match &self.spec.model {
            Model::Linear(_) => {
                let p = self.param_count();
                let mut w = DMatrix::zeros(p, samples.len());
                for (k, s) in samples.iter().enumerate() {
                    self.spec.check(s)?;
                    w.set_column(k, s);
                }
                out = &self.design * w;
            }
            Model::Network { .. } => {
                for (k, s) in samples.iter().enumerate() {
                    out.set_column(k, &self.predict(s)?);
                }
            }
        }
        Ok(out)
    }

    /// Posterior target for the observations in `log`.
    pub fn target(&self, log: &ObservationLog, noise_variances: &[f64]) -> Result<SurrogateTarget<'_>> {
        let data = SurrogateData::from_log(log, noise_variances)?;
        self.target_from(data)
    }

    pub fn target_from(&self, data: SurrogateData) -> Result<SurrogateTarget<'_>> {
        if let Some(&n) = data.index.iter().find(|&&n| n >= self.len()) {
            return Err(Error::IndexOutOfRange { index: n, len: self.len() });
        }
        let design = match self.spec.model {
            Model::Linear(_) => self.design.select_rows(&data.index),
            Model::Network { .. } => self.design.select_columns(&data.index),
        };
        Ok(SurrogateTarget {
            surrogate: self,
            data,
            design,
        })
    }
}

/// Per-candidate sufficient statistics of the observed scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateData {
    pub index: Vec<usize>,
    pub count: Vec<f64>,
    pub sum: Vec<f64>,
    pub sum_of_squares: Vec<f64>,
    pub noise_variance: Vec<f64>,
}

impl SurrogateData {
    pub fn from_log(log: &ObservationLog, noise_variances: &[f64]) -> Result<Self> {
        if noise_variances.len() != log.num_candidates() {
            return Err(Error::dims(log.num_candidates(), noise_variances.len(), "noise variances"));
        }
        let mut data = SurrogateData {
            index: Vec::new(),
            count: Vec::new(),
            sum: Vec::new(),
            sum_of_squares: Vec::new(),
            noise_variance: Vec::new(),
        };
        for n in 0..log.num_candidates() {
            let r = log.count(n);
            if r == 0 {
                continue;
            }
            let s2 = noise_variances[n];
            if !(s2 > 0.0 && s2.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "noise variance of observed candidate {n} must be > 0, got {s2}"
                )));
            }
            data.index.push(n);
            data.count.push(r as f64);
            data.sum.push(log.sum(n));
            data.sum_of_squares.push(log.sum_of_squares(n));
            data.noise_variance.push(s2);
        }
        Ok(data)
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

/// Unnormalized log posterior `log p(S_t | W) + log π(W)` of one surrogate
/// given the observations.
#[derive(Debug, Clone)]
pub struct SurrogateTarget<'a> {
    surrogate: &'a Surrogate,
    data: SurrogateData,
    design: DMatrix<f64>,
}

impl SurrogateTarget<'_> {
    pub fn surrogate(&self) -> &Surrogate {
        self.surrogate
    }

    pub fn data(&self) -> &SurrogateData {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.surrogate.param_count()
    }

    fn observed_predictions(&self, w: &DVector<f64>) -> Option<NetworkPass> {
        match &self.surrogate.spec.model {
            Model::Linear(_) => None,
            Model::Network { widths, activation } => Some(network_forward(widths, *activation, w, &self.design)),
        }
    }

    fn predictions(&self, w: &DVector<f64>, pass: &Option<NetworkPass>) -> DVector<f64> {
        match pass {
            Some(p) => p.output.clone(),
            None => &self.design * w,
        }
    }

    fn value_from(&self, w: &DVector<f64>, f: &DVector<f64>) -> f64 {
        let d = &self.data;
        let mut ll = 0.0;
        for i in 0..d.index.len() {
            let sse = d.sum_of_squares[i] - 2.0 * f[i] * d.sum[i] + d.count[i] * f[i] * f[i];
            ll -= sse / (2.0 * d.noise_variance[i]);
        }
        let s2 = self.surrogate.spec.prior_scale.powi(2);
        ll - w.norm_squared() / (2.0 * s2)
    }

    pub fn log_density(&self, w: &DVector<f64>) -> Result<f64> {
        self.surrogate.spec.check(w)?;
        let pass = self.observed_predictions(w);
        let f = self.predictions(w, &pass);
        Ok(self.value_from(w, &f))
    }

    pub fn log_density_and_gradient(&self, w: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.surrogate.spec.check(w)?;
        let pass = self.observed_predictions(w);
        let f = self.predictions(w, &pass);
        let value = self.value_from(w, &f);
        let d = &self.data;
        let c = DVector::from_iterator(
            f.len(),
            (0..f.len()).map(|i| (d.sum[i] - d.count[i] * f[i]) / d.noise_variance[i]),
        );
        let mut grad = match (&self.surrogate.spec.model, &pass) {
            (Model::Network { widths, activation }, Some(p)) => network_backward(widths, *activation, w, p, &c),
            _ => self.design.tr_mul(&c),
        };
        grad.axpy(-1.0 / self.surrogate.spec.prior_scale.powi(2), w, 1.0);
        Ok((value, grad))
    }
}

/// `Σ_{n,m} -(v̂_{n,m} - f(z_n; W))² / (2σ_n²) + log π(W)` up to a
/// `W`-independent constant.
pub fn log_posterior_density(
    surrogate: &Surrogate,
    w: &DVector<f64>,
    log: &ObservationLog,
    noise_variances: &[f64],
) -> Result<f64> {
    surrogate.target(log, noise_variances)?.log_density(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Predictive mean and variance of `φᵀ W`.
    pub fn predictive(&self, phi: &DVector<f64>) -> (f64, f64) {
        (phi.dot(&self.mean), (phi.transpose() * &self.covariance * phi)[0])
    }
}

/// Conjugate posterior of a linear surrogate under heteroscedastic Gaussian
/// noise: precision `Σ_n r_n/σ_n² φ_n φ_nᵀ + I/s²`.
pub fn blr_exact_posterior(target: &SurrogateTarget<'_>) -> Result<GaussianPosterior> {
    if !matches!(target.surrogate.spec.model, Model::Linear(_)) {
        return Err(Error::InvalidConfig(
            "exact posterior requires a linear surrogate".into(),
        ));
    }
    let p = target.dim();
    let d = &target.data;
    let prior_precision = 1.0 / target.surrogate.spec.prior_scale.powi(2);
    let mut precision = DMatrix::identity(p, p) * prior_precision;
    let mut rhs = DVector::zeros(p);
    for i in 0..d.index.len() {
        let phi = target.design.row(i).transpose();
        precision.ger(d.count[i] / d.noise_variance[i], &phi, &phi, 1.0);
        rhs.axpy(d.sum[i] / d.noise_variance[i], &phi, 1.0);
    }
    let ch = cholesky_with_jitter(&precision, 0.0)?;
    let mean = ch.solve(&rhs);
    let cov = ch.inverse();
    let covariance = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianPosterior { mean, covariance })
}

/// Kernel predictor `μ = k(z̃)ᵀ (K + σ²I)⁻¹ y`,
/// `s² = k(z̃, z̃) - k(z̃)ᵀ (K + σ²I)⁻¹ k(z̃)`.
pub fn gp_function_space_predict<K>(
    kernel: K,
    inputs: &[DVector<f64>],
    y: &[f64],
    noise_variance: f64,
    query: &DVector<f64>,
) -> Result<(f64, f64)>
where
    K: Fn(&DVector<f64>, &DVector<f64>) -> f64,
{
    if inputs.len() != y.len() {
        return Err(Error::dims(inputs.len(), y.len(), "training targets"));
    }
    if !(noise_variance > 0.0) {
        return Err(Error::InvalidConfig("noise variance must be > 0".into()));
    }
    let prior = kernel(query, query);
    if inputs.is_empty() {
        return Ok((0.0, prior));
    }
    let n = inputs.len();
    let gram = DMatrix::from_fn(n, n, |i, j| kernel(&inputs[i], &inputs[j]));
    let mut c = gram;
    for i in 0..n {
        c[(i, i)] += noise_variance;
    }
    let ch = cholesky_with_jitter(&c, 0.0)?;
    let k = DVector::from_iterator(n, inputs.iter().map(|x| kernel(x, query)));
    let alpha = ch.solve(&DVector::from_column_slice(y));
    let v = ch.solve(&k);
    Ok((k.dot(&alpha), (prior - k.dot(&v)).max(0.0)))
}
