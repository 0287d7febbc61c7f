//! Building the feasible set: encode example prompts into the latent space,
//! grow the set by covariance-shaped perturbations that stay within a
//! similarity band of their seed, then project to soft prompts with PCA.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::{CandidateSet, LatentBox, LatentVector};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, standard_normal_vector};
use crate::scoring::TextSimilarity;

/// Text ↔ latent-vector codec.
pub trait EmbeddingProvider {
    fn latent_dim(&self) -> usize;
    fn encode(&mut self, text: &str) -> Result<Vec<f64>>;
    fn decode(&self, latent: &[f64]) -> Result<String>;
}

/// Deterministic stand-in for a trained text autoencoder.
///
/// Tokens are feature-hashed into a signed bag-of-words vector, normalized to
/// unit length and rotated by a seeded orthogonal map (a product of
/// Householder reflections with random sign flips), so every coordinate lies
/// in `[-1, 1]`. Decoding returns the previously encoded text whose latent
/// vector is nearest.
#[derive(Debug, Clone)]
pub struct HashingEmbedding {
    dim: usize,
    reflections: Vec<DVector<f64>>,
    signs: Vec<f64>,
    known: Vec<(String, Vec<f64>)>,
}

impl HashingEmbedding {
    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let reflections = (0..4)
            .map(|_| {
                let v = standard_normal_vector(dim, rng);
                let n = v.norm();
                if n > 0.0 {
                    v / n
                } else {
                    v
                }
            })
            .collect();
        let signs = (0..dim)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        HashingEmbedding {
            dim,
            reflections,
            signs,
            known: Vec::new(),
        }
    }

    fn features(&self, text: &str) -> DVector<f64> {
        let mut f = DVector::zeros(self.dim);
        for token in crate::scoring::tokenize(text) {
            // FNV-1a; stable across platforms and runs.
            let mut h: u64 = 0xcbf29ce484222325;
            for b in token.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            let idx = (h % self.dim as u64) as usize;
            f[idx] += if (h >> 63) == 0 { 1.0 } else { -1.0 };
        }
        let n = f.norm();
        if n > 0.0 {
            f /= n;
        }
        f
    }

    fn rotate(&self, mut x: DVector<f64>) -> DVector<f64> {
        for (xi, s) in x.iter_mut().zip(&self.signs) {
            *xi *= s;
        }
        for v in &self.reflections {
            let d = 2.0 * v.dot(&x);
            x.axpy(-d, v, 1.0);
        }
        x
    }

    pub fn known_texts(&self) -> impl Iterator<Item = &str> {
        self.known.iter().map(|(t, _)| t.as_str())
    }
}

impl EmbeddingProvider for HashingEmbedding {
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn encode(&mut self, text: &str) -> Result<Vec<f64>> {
        let x: Vec<f64> = self
            .rotate(self.features(text))
            .iter()
            .map(|v| v.clamp(-1.0, 1.0))
            .collect();
        if !self.known.iter().any(|(t, _)| t == text) {
            self.known.push((text.to_owned(), x.clone()));
        }
        Ok(x)
    }

    fn decode(&self, latent: &[f64]) -> Result<String> {
        if latent.len() != self.dim {
            return Err(Error::dims(self.dim, latent.len(), "latent vector to decode"));
        }
        let mut best: Option<(&str, f64)> = None;
        for (text, x) in &self.known {
            let d = crate::linalg::squared_distance(x, latent);
            if best.map_or(true, |(_, b)| d < b) {
                best = Some((text, d));
            }
        }
        best.map(|(t, _)| t.to_owned())
            .ok_or_else(|| Error::InsufficientData("decoder has no known prompts".into()))
    }
}

/// Diagonal regularization added to the perturbation covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Ridge {
    Absolute(f64),
    /// `factor · trace(Σ) / dim`, never below `1e-12`.
    TraceRelative(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::TraceRelative(1e-8)
    }
}

impl Ridge {
    fn amount(&self, trace: f64, dim: usize) -> f64 {
        match *self {
            Ridge::Absolute(v) => v,
            Ridge::TraceRelative(f) => (f * trace / dim.max(1) as f64).max(1e-12),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub target_count: usize,
    /// Accept when `lower < similarity < upper`.
    pub band: (f64, f64),
    #[serde(default)]
    pub latent_box: LatentBox,
    #[serde(default)]
    pub ridge: Ridge,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
}

fn default_max_attempts() -> usize {
    100_000
}

impl SearchConfig {
    pub fn validate(&self, initial_count: usize) -> Result<()> {
        let (r1, r2) = self.band;
        if !(0.0 <= r1 && r1 < r2) {
            return Err(Error::InvalidConfig(format!(
                "similarity band needs 0 <= r1 < r2, got ({r1}, {r2})"
            )));
        }
        if self.target_count < initial_count {
            return Err(Error::InvalidConfig(format!(
                "target count {} is below the {initial_count} initial prompts",
                self.target_count
            )));
        }
        if self.latent_box.lower >= self.latent_box.upper {
            return Err(Error::InvalidConfig("latent box is empty".into()));
        }
        Ok(())
    }
}

fn centered_columns(latents: &[LatentVector]) -> Result<(DMatrix<f64>, usize)> {
    let l = latents.len();
    if l < 2 {
        return Err(Error::InsufficientData(format!(
            "perturbation covariance needs at least 2 latent vectors, got {l}"
        )));
    }
    let dim = latents[0].values.len();
    let mut x = DMatrix::zeros(dim, l);
    for (j, v) in latents.iter().enumerate() {
        if v.values.len() != dim {
            return Err(Error::dims(dim, v.values.len(), "latent vector"));
        }
        x.set_column(j, &DVector::from_column_slice(&v.values));
    }
    let mean = x.column_mean();
    for mut c in x.column_iter_mut() {
        c -= &mean;
    }
    Ok((x, dim))
}

/// `Σ_p = (1/L) Σ (X_n - X̄)(X_n - X̄)ᵀ + ridge · I`.
pub fn perturbation_covariance(latents: &[LatentVector], ridge: Ridge) -> Result<DMatrix<f64>> {
    let (xc, dim) = centered_columns(latents)?;
    let mut cov = &xc * xc.transpose() / latents.len() as f64;
    let r = ridge.amount(cov.trace(), dim);
    for i in 0..dim {
        cov[(i, i)] += r;
    }
    Ok(cov)
}

/// Draws `V ~ N(0, Σ_p)`.
///
/// When the set has fewer vectors than dimensions the draw uses the exact
/// low-rank factorization `V = Δ ξ / √L + √ridge · η` (Δ the centered
/// vectors), avoiding a dense `D̃ × D̃` Cholesky; otherwise the dense
/// Cholesky factor is used.
#[derive(Debug, Clone)]
pub struct PerturbationSampler {
    factor: Factor,
}

#[derive(Debug, Clone)]
enum Factor {
    Dense(DMatrix<f64>),
    LowRank { scaled: DMatrix<f64>, ridge_sd: f64 },
}

impl PerturbationSampler {
    pub fn from_matrix(cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(Error::dims(cov.nrows(), cov.ncols(), "covariance"));
        }
        let ch = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("perturbation covariance".into()))?;
        Ok(PerturbationSampler {
            factor: Factor::Dense(ch.unpack()),
        })
    }

    pub fn from_latents(latents: &[LatentVector], ridge: Ridge) -> Result<Self> {
        let (xc, dim) = centered_columns(latents)?;
        let l = latents.len();
        if l >= dim {
            let cov = perturbation_covariance(latents, ridge)?;
            let ch = cholesky_with_jitter(&cov, 0.0)?;
            return Ok(PerturbationSampler {
                factor: Factor::Dense(ch.unpack()),
            });
        }
        let trace = xc.iter().map(|v| v * v).sum::<f64>() / l as f64;
        let r = ridge.amount(trace, dim);
        if r <= 0.0 {
            return Err(Error::NotPositiveDefinite("rank-deficient covariance without ridge".into()));
        }
        Ok(PerturbationSampler {
            factor: Factor::LowRank {
                scaled: xc / (l as f64).sqrt(),
                ridge_sd: r.sqrt(),
            },
        })
    }

    pub fn dim(&self) -> usize {
        match &self.factor {
            Factor::Dense(l) => l.nrows(),
            Factor::LowRank { scaled, .. } => scaled.nrows(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match &self.factor {
            Factor::Dense(l) => l * standard_normal_vector(l.ncols(), rng),
            Factor::LowRank { scaled, ridge_sd } => {
                let xi = standard_normal_vector(scaled.ncols(), rng);
                let eta = standard_normal_vector(scaled.nrows(), rng);
                scaled * xi + eta * *ridge_sd
            }
        }
    }
}

/// Picks a seed index with probability `exp(-ñ_l) / Σ exp(-ñ_n)`.
pub fn select_seed<R: Rng + ?Sized>(latents: &[LatentVector], rng: &mut R) -> usize {
    assert!(!latents.is_empty(), "select_seed on an empty set");
    let min = latents.iter().map(|x| x.selection_count).min().unwrap_or(0);
    let weights: Vec<f64> = latents
        .iter()
        .map(|x| (-((x.selection_count - min) as f64)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    latents.len() - 1
}

/// `X' = X_l + V`, `V ~ N(0, Σ_p)`.
pub fn propose_latent<R: Rng + ?Sized>(
    seed: &[f64],
    sampler: &PerturbationSampler,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if seed.len() != sampler.dim() {
        return Err(Error::dims(sampler.dim(), seed.len(), "seed latent"));
    }
    let v = sampler.sample(rng);
    Ok(seed.iter().zip(v.iter()).map(|(x, dv)| x + dv).collect())
}

/// In the latent box and strictly inside the similarity band of the seed
/// prompt.
pub fn accept_latent<P, S>(
    candidate: &[f64],
    seed_text: &str,
    cfg: &SearchConfig,
    provider: &P,
    similarity: &S,
) -> Result<bool>
where
    P: EmbeddingProvider + ?Sized,
    S: TextSimilarity + ?Sized,
{
    if !cfg.latent_box.contains(candidate) {
        return Ok(false);
    }
    let decoded = provider.decode(candidate)?;
    let s = similarity.similarity(&decoded, seed_text)?;
    Ok(cfg.band.0 < s && s < cfg.band.1)
}

/// Grows `initial` to `cfg.target_count` vectors. The initial vectors stay
/// as a prefix; selection counts are updated on every seed pick.
pub fn extend_latent_set<P, S, R>(
    initial: Vec<LatentVector>,
    cfg: &SearchConfig,
    provider: &P,
    similarity: &S,
    rng: &mut R,
) -> Result<Vec<LatentVector>>
where
    P: EmbeddingProvider + ?Sized,
    S: TextSimilarity + ?Sized,
    R: Rng + ?Sized,
{
    if initial.is_empty() {
        return Err(Error::InsufficientData("no initial latent vectors".into()));
    }
    cfg.validate(initial.len())?;
    let mut set = initial;
    if set.len() >= cfg.target_count {
        return Ok(set);
    }
    let mut sampler = PerturbationSampler::from_latents(&set, cfg.ridge)?;
    let mut attempts = 0;
    while set.len() < cfg.target_count {
        if attempts >= cfg.max_attempts {
            return Err(Error::SearchExhausted {
                attempts,
                target: cfg.target_count,
                found: set,
            });
        }
        attempts += 1;
        let l = select_seed(&set, rng);
        set[l].selection_count += 1;
        let proposal = propose_latent(&set[l].values, &sampler, rng)?;
        let seed_text = match provider.decode(&set[l].values) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("decoding seed {l} failed: {e}");
                continue;
            }
        };
        match accept_latent(&proposal, &seed_text, cfg, provider, similarity) {
            Ok(true) => {
                let id = set.len();
                set.push(LatentVector::new(id, proposal));
                sampler = PerturbationSampler::from_latents(&set, cfg.ridge)?;
            }
            Ok(false) => {}
            Err(e) => log::warn!("proposal rejected after evaluation error: {e}"),
        }
    }
    Ok(set)
}

/// Principal directions of a latent set and the resulting soft prompts.
#[derive(Debug, Clone)]
pub struct PcaProjection {
    /// `D × D̃`, rows are unit eigenvectors by descending eigenvalue.
    pub projection: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// `z_n = A X_n` (uncentered, as the latent box makes standardization
    /// unnecessary).
    pub soft_prompts: Vec<DVector<f64>>,
}

/// PCA on the `1/N`-normalized sample covariance.
///
/// Uses the `N × N` Gram matrix when `N < D̃`. `dim` is clamped (with a
/// warning) to the numerical rank: eigenvalues above `1e-10 · λ_max`.
pub fn pca_project(latents: &[DVector<f64>], dim: usize) -> Result<PcaProjection> {
    let n = latents.len();
    if n < 2 {
        return Err(Error::InsufficientData("PCA needs at least two points".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidConfig("projection dimension must be >= 1".into()));
    }
    let d_latent = latents[0].len();
    let mut x = DMatrix::zeros(d_latent, n);
    for (j, v) in latents.iter().enumerate() {
        if v.len() != d_latent {
            return Err(Error::dims(d_latent, v.len(), "latent vector"));
        }
        x.set_column(j, v);
    }
    let mean = x.column_mean();
    let mut xc = x.clone();
    for mut c in xc.column_iter_mut() {
        c -= &mean;
    }

    let (values, vectors): (Vec<f64>, Vec<DVector<f64>>) = if n >= d_latent {
        let cov = &xc * xc.transpose() / n as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d_latent).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        order
            .iter()
            .map(|&i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
            .unzip()
    } else {
        let gram = xc.transpose() * &xc / n as f64;
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        order
            .iter()
            .map(|&i| {
                let lambda = eig.eigenvalues[i];
                let u = eig.eigenvectors.column(i);
                let v = &xc * u;
                let norm = v.norm();
                let v = if norm > 0.0 { v / norm } else { v };
                (lambda, v)
            })
            .unzip()
    };

    let lambda_max = values.first().copied().unwrap_or(0.0);
    let rank = values.iter().filter(|&&v| v > 1e-10 * lambda_max && v > 0.0).count();
    if rank == 0 {
        return Err(Error::InsufficientData("latent vectors have zero spread".into()));
    }
    let kept = if dim > rank {
        log::warn!("requested {dim} principal directions but the data has rank {rank}; using {rank}");
        rank
    } else {
        dim
    };

    let mut projection = DMatrix::zeros(kept, d_latent);
    for (r, v) in vectors.iter().take(kept).enumerate() {
        // Fix the sign: the largest-magnitude entry is positive.
        let pivot = v.iamax();
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        projection.set_row(r, &(v * sign).transpose());
    }
    let soft_prompts = latents.iter().map(|x| &projection * x).collect();
    Ok(PcaProjection {
        projection,
        eigenvalues: values.into_iter().take(kept).collect(),
        soft_prompts,
    })
}

/// Runs the whole search stage: encode the example prompts, extend the latent
/// set, project it, and attach decoded prompt texts.
pub fn build_candidate_set<P, S, R>(
    initial_prompts: &[&str],
    cfg: &SearchConfig,
    soft_dim: usize,
    provider: &mut P,
    similarity: &S,
    rng: &mut R,
) -> Result<CandidateSet>
where
    P: EmbeddingProvider + ?Sized,
    S: TextSimilarity + ?Sized,
    R: Rng + ?Sized,
{
    let initial = initial_prompts
        .iter()
        .enumerate()
        .map(|(i, t)| Ok(LatentVector::new(i, provider.encode(t)?)))
        .collect::<Result<Vec<_>>>()?;
    let n_initial = initial.len();
    let latents = extend_latent_set(initial, cfg, &*provider, similarity, rng)?;
    let points: Vec<DVector<f64>> = latents.iter().map(LatentVector::as_dvector).collect();
    let pca = pca_project(&points, soft_dim)?;
    let mut set =
        CandidateSet::from_projection(latents, pca.projection, cfg.latent_box, (0..n_initial).collect())?;
    for n in 0..set.len() {
        if let Ok(text) = provider.decode(&set.latents()[n].values) {
            set.set_prompt_text(n, text);
        }
    }
    Ok(set)
}
