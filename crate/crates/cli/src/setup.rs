//! Per-replication candidate sets, ground truth and oracles.

use nalgebra::{DMatrix, DVector};
use promptsel::candidates::{CandidateSet, LatentBox, LatentVector};
use promptsel::error::OracleError;
use promptsel::scoring::{
    BaselineSet, HttpTransport, Landscape, LlmEvaluator, Oracle, Peak, SyntheticLatentOracle, SyntheticOracle,
    TextScorer,
};
use promptsel::search::{build_candidate_set, pca_project, HashingEmbedding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{CandidateSource, GeneratedLandscape, LoadedConfig, OracleConfig};
use crate::error::{CliError, Result};

/// Stream ids under the replication seed; the selection loop itself uses
/// streams 0 to 3 of the same seed.
pub mod stream {
    pub const INSTANCE: u64 = 10;
    pub const ORACLE: u64 = 11;
    pub const LATENT_ORACLE: u64 = 12;
    pub const PSK: u64 = 13;
    pub const SPLIT: u64 = 14;
    pub const RANDOM_SEARCH: u64 = 15;
}

pub fn stream_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Seed for a sub-component, drawn from its own stream.
pub fn stream_seed(seed: u64, id: u64) -> u64 {
    stream_rng(seed, id).random()
}

/// Known means for synthetic oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub means: Vec<f64>,
    /// Present unless the means were given per candidate.
    pub landscape: Option<Landscape>,
    pub noise_std: f64,
}

impl Truth {
    pub fn best_mean(&self) -> f64 {
        self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub candidates: CandidateSet,
    pub truth: Option<Truth>,
}

pub fn build_instance(loaded: &LoadedConfig, count: Option<usize>, seed: u64) -> Result<Instance> {
    let mut rng = stream_rng(seed, stream::INSTANCE);
    let candidates = build_candidates(loaded, count, &mut rng)?;
    let truth = match &loaded.config.oracle {
        OracleConfig::Synthetic {
            noise_std,
            means,
            landscape,
            generated,
        } => Some(build_truth(&candidates, *noise_std, means.as_deref(), landscape.as_ref(), generated, &mut rng)?),
        OracleConfig::Llm { .. } => None,
    };
    Ok(Instance { candidates, truth })
}

fn uniform_in(b: LatentBox, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(b.lower..=b.upper)).collect()
}

fn build_candidates(loaded: &LoadedConfig, count: Option<usize>, rng: &mut ChaCha8Rng) -> Result<CandidateSet> {
    Ok(match &loaded.config.candidates {
        CandidateSource::Random {
            count: c,
            dim,
            latent_dim,
            latent_box,
        } => {
            let n = count.unwrap_or(*c);
            match latent_dim {
                None => {
                    let latents: Vec<LatentVector> = (0..n)
                        .map(|i| LatentVector::new(i, uniform_in(*latent_box, *dim, rng)))
                        .collect();
                    CandidateSet::from_projection(latents, DMatrix::identity(*dim, *dim), *latent_box, Vec::new())?
                }
                Some(l) => {
                    let latents: Vec<LatentVector> = (0..n)
                        .map(|i| LatentVector::new(i, uniform_in(*latent_box, *l, rng)))
                        .collect();
                    let points: Vec<DVector<f64>> = latents.iter().map(LatentVector::as_dvector).collect();
                    let pca = pca_project(&points, *dim)?;
                    CandidateSet::from_projection(latents, pca.projection, *latent_box, Vec::new())?
                }
            }
        }
        CandidateSource::File { path } => {
            let set = CandidateSet::load(loaded.resolve(path))?;
            if count.is_some_and(|n| n != set.len()) {
                return Err(CliError::Report(format!(
                    "candidate file has {} candidates, {} requested",
                    set.len(),
                    count.unwrap_or_default()
                )));
            }
            set
        }
        CandidateSource::Search {
            prompts,
            search,
            dim,
            latent_dim,
            similarity,
        } => {
            let mut cfg = search.clone();
            if let Some(n) = count {
                cfg.target_count = n;
            }
            let mut provider = HashingEmbedding::new(*latent_dim, rng);
            let scorer = TextScorer::new(similarity, prompts.iter().map(String::as_str));
            let texts: Vec<&str> = prompts.iter().map(String::as_str).collect();
            build_candidate_set(&texts, &cfg, *dim, &mut provider, &scorer, rng)?
        }
    })
}

fn build_truth(
    candidates: &CandidateSet,
    noise_std: f64,
    means: Option<&[f64]>,
    landscape: Option<&Landscape>,
    generated: &GeneratedLandscape,
    rng: &mut ChaCha8Rng,
) -> Result<Truth> {
    if let Some(m) = means {
        if m.len() != candidates.len() {
            return Err(CliError::Report(format!(
                "{} oracle means for {} candidates",
                m.len(),
                candidates.len()
            )));
        }
        return Ok(Truth {
            means: m.to_vec(),
            landscape: None,
            noise_std,
        });
    }
    let dim = candidates.latent_dim();
    let landscape = match landscape {
        Some(l) => l.clone(),
        None => generate_landscape(generated, dim, candidates.latent_box(), rng),
    };
    let means = candidates
        .latents()
        .iter()
        .map(|x| landscape.value(&x.values))
        .collect::<promptsel::error::Result<Vec<_>>>()?;
    Ok(Truth {
        means,
        landscape: Some(landscape),
        noise_std,
    })
}

pub fn generate_landscape(kind: &GeneratedLandscape, dim: usize, b: LatentBox, rng: &mut ChaCha8Rng) -> Landscape {
    match *kind {
        GeneratedLandscape::Linear { scale } => Landscape::Linear {
            weights: (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect(),
            intercept: 0.0,
        },
        GeneratedLandscape::QuadraticBowl { curvature } => Landscape::QuadraticBowl {
            center: uniform_in(b, dim, rng),
            height: 0.0,
            curvature,
        },
        GeneratedLandscape::MultiModal { peaks, width } => Landscape::MultiModal {
            peaks: (0..peaks)
                .map(|_| Peak {
                    center: uniform_in(b, dim, rng),
                    height: rng.random_range(0.5..1.0),
                    width,
                })
                .collect(),
        },
    }
}

/// Candidate-indexed oracle of either kind.
pub enum CandidateOracle {
    Synthetic(SyntheticOracle),
    Llm(Box<LlmEvaluator<HttpTransport>>),
}

impl Oracle for CandidateOracle {
    fn num_candidates(&self) -> usize {
        match self {
            CandidateOracle::Synthetic(o) => o.num_candidates(),
            CandidateOracle::Llm(o) => o.num_candidates(),
        }
    }

    fn evaluate(&mut self, candidate: usize) -> Result<f64, OracleError> {
        match self {
            CandidateOracle::Synthetic(o) => o.evaluate(candidate),
            CandidateOracle::Llm(o) => o.evaluate(candidate),
        }
    }
}

/// A fresh oracle whose noise is driven by `seed`'s oracle stream, so
/// every method in a replication sees the same noise sequence.
pub fn make_oracle(loaded: &LoadedConfig, instance: &Instance, seed: u64) -> Result<CandidateOracle> {
    let noise_seed = stream_seed(seed, stream::ORACLE);
    match (&loaded.config.oracle, &instance.truth) {
        (OracleConfig::Synthetic { .. }, Some(truth)) => Ok(CandidateOracle::Synthetic(
            SyntheticOracle::with_uniform_noise(truth.means.clone(), truth.noise_std, noise_seed)?,
        )),
        (
            OracleConfig::Llm {
                evaluator,
                baseline,
                score,
            },
            _,
        ) => {
            let baseline = BaselineSet::load(loaded.resolve(baseline))?;
            let transport = HttpTransport::from_config(evaluator)
                .map_err(|e| CliError::Report(format!("llm transport: {e}")))?;
            let prompts = instance
                .candidates
                .prompts()
                .iter()
                .map(|p| p.prompt_text.clone())
                .collect();
            Ok(CandidateOracle::Llm(Box::new(LlmEvaluator::new(
                evaluator.clone(),
                baseline,
                *score,
                transport,
                prompts,
                noise_seed,
            )?)))
        }
        (OracleConfig::Synthetic { .. }, None) => Err(CliError::Report("synthetic oracle without ground truth".into())),
    }
}

pub fn make_latent_oracle(truth: &Truth, seed: u64) -> Result<SyntheticLatentOracle> {
    let landscape = truth
        .landscape
        .clone()
        .ok_or_else(|| CliError::Report("latent oracle needs a landscape".into()))?;
    Ok(SyntheticLatentOracle::new(
        landscape,
        truth.noise_std,
        stream_seed(seed, stream::LATENT_ORACLE),
    )?)
}
