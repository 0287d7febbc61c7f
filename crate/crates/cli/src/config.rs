//! Experiment configuration: a TOML document deserialized into
//! [`ExperimentConfig`] and checked by [`validate`].

use std::path::{Path, PathBuf};

use promptsel::candidates::LatentBox;
use promptsel::psk::PskFitConfig;
use promptsel::posterior::SamplerConfig;
use promptsel::scoring::{Landscape, LlmEvaluatorConfig, ScoreFunctionConfig};
use promptsel::search::{Ridge, SearchConfig};
use promptsel::selection::{LoopConfig, Method};
use promptsel::surrogate::SurrogateConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, ConfigError, ConfigIssue, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SingleRun,
    SurrogateCompare,
    MucbVsPrmucb,
    TwoStageVsPsk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
    /// Relative paths resolve against the config file's directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Selection rule for `single-run` and the first stage of
    /// `two-stage-vs-psk`.
    #[serde(default = "default_method")]
    pub method: Method,
    pub candidates: CandidateSource,
    pub oracle: OracleConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default)]
    pub selection: LoopConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub psk: PskStageConfig,
}

fn one() -> usize {
    1
}

fn default_method() -> Method {
    Method::Mucb
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum CandidateSource {
    /// Latent vectors uniform in the box; PCA-projected to `dim` when
    /// `latent_dim` is given, otherwise the soft prompts themselves.
    Random {
        count: usize,
        dim: usize,
        #[serde(default)]
        latent_dim: Option<usize>,
        #[serde(default)]
        latent_box: LatentBox,
    },
    /// A candidate-set JSON document.
    File { path: PathBuf },
    /// The search stage over the hashing embedding, seeded from example
    /// prompts.
    Search {
        prompts: Vec<String>,
        search: SearchConfig,
        dim: usize,
        latent_dim: usize,
        #[serde(default)]
        similarity: ScoreFunctionConfig,
    },
}

impl CandidateSource {
    /// Candidate count when it is known without loading anything.
    pub fn count(&self) -> Option<usize> {
        match self {
            CandidateSource::Random { count, .. } => Some(*count),
            CandidateSource::Search { search, .. } => Some(search.target_count),
            CandidateSource::File { .. } => None,
        }
    }

    pub fn latent_dim(&self) -> Option<usize> {
        match self {
            CandidateSource::Random { dim, latent_dim, .. } => Some(latent_dim.unwrap_or(*dim)),
            CandidateSource::Search { latent_dim, .. } => Some(*latent_dim),
            CandidateSource::File { .. } => None,
        }
    }

    fn initial_count(&self) -> usize {
        match self {
            CandidateSource::Search { prompts, .. } => prompts.len(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleConfig {
    /// Ground truth over the latent space plus Gaussian noise. `means`
    /// fixes the candidate means directly; otherwise `landscape` is used,
    /// or a landscape is drawn per replication from `generated`.
    Synthetic {
        noise_std: f64,
        #[serde(default)]
        means: Option<Vec<f64>>,
        #[serde(default)]
        landscape: Option<Landscape>,
        #[serde(default)]
        generated: GeneratedLandscape,
    },
    /// Chat-completions endpoint scored against a baseline set.
    Llm {
        evaluator: LlmEvaluatorConfig,
        baseline: PathBuf,
        #[serde(default)]
        score: ScoreFunctionConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratedLandscape {
    /// Weights `N(0, scale²)`, no intercept.
    Linear {
        #[serde(default = "unit")]
        scale: f64,
    },
    /// Center uniform in the box, height 0.
    QuadraticBowl {
        #[serde(default = "unit")]
        curvature: f64,
    },
    /// Centers uniform in the box, heights `U(0.5, 1)`.
    MultiModal {
        #[serde(default = "default_peaks")]
        peaks: usize,
        #[serde(default = "default_width")]
        width: f64,
    },
}

fn unit() -> f64 {
    1.0
}

fn default_peaks() -> usize {
    3
}

fn default_width() -> f64 {
    0.5
}

impl Default for GeneratedLandscape {
    fn default() -> Self {
        GeneratedLandscape::Linear { scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    /// `T`, warm-up included.
    pub total: u64,
    /// Additional PSK evaluations `I`.
    pub refinement: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            total: 500,
            refinement: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseEstimate {
    /// One variance pooled over every training candidate.
    #[default]
    Pooled,
    /// The kriging variance model over the soft prompts.
    VarianceModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Candidate counts to sweep; empty uses the candidate source as is.
    pub sizes: Vec<usize>,
    pub train_fraction: f64,
    pub train_reps: usize,
    pub holdout_reps: usize,
    /// Posterior samples `K`.
    pub samples: usize,
    /// Nominal coverage of the central sample-quantile interval.
    pub interval: f64,
    pub noise: NoiseEstimate,
    pub models: Vec<ModelSpec>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            sizes: Vec::new(),
            train_fraction: 0.7,
            train_reps: 5,
            holdout_reps: 50,
            samples: 100,
            interval: 0.9,
            noise: NoiseEstimate::Pooled,
            models: vec![ModelSpec {
                name: "blr".into(),
                surrogate: SurrogateConfig::default(),
                sampler: SamplerConfig::Exact,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PskStageConfig {
    /// Candidate `D*`; more than one triggers cross-validation.
    pub dims: Vec<usize>,
    pub train_fraction: f64,
    pub fit: PskFitConfig,
    pub local_proposals: usize,
    pub uniform_proposals: usize,
    pub ridge: Ridge,
    /// Also report uniform random search with the same extra budget.
    pub random_search: bool,
}

impl Default for PskStageConfig {
    fn default() -> Self {
        PskStageConfig {
            dims: vec![3],
            train_fraction: 0.7,
            fit: PskFitConfig::default(),
            local_proposals: 512,
            uniform_proposals: 512,
            ridge: Ridge::default(),
            random_search: true,
        }
    }
}

/// A parsed and validated config with the text it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
    /// Directory that relative paths resolve against.
    pub base_dir: PathBuf,
    pub file: String,
}

impl LoadedConfig {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

/// Reads a TOML config, or the config embedded in a `summary.json`.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file = path.display().to_string();
    if path.extension().is_some_and(|e| e == "json") {
        let summary: crate::output::Summary = serde_json::from_str(&text)?;
        return parse_config(&summary.config_text, &file, Path::new(&summary.base_dir));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
    parse_config(&text, &file, &base)
}

pub fn parse_config(text: &str, file: &str, base_dir: &Path) -> Result<LoadedConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ConfigError {
            file: file.to_string(),
            issues: vec![ConfigIssue {
                line,
                column,
                message: e.message().trim().to_string(),
            }],
        }
    })?;
    let loaded = LoadedConfig {
        config,
        text: text.to_string(),
        base_dir: base_dir.to_path_buf(),
        file: file.to_string(),
    };
    let problems = validate(&loaded);
    if !problems.is_empty() {
        let issues = problems
            .into_iter()
            .map(|(key, message)| {
                let (line, column) = locate_key(text, &key);
                ConfigIssue {
                    line,
                    column,
                    message: format!("{key}: {message}"),
                }
            })
            .collect();
        return Err(ConfigError {
            file: file.to_string(),
            issues,
        }
        .into());
    }
    Ok(loaded)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Line and column of the most specific key or table header along the
/// dotted `key`; `(1, 1)` when nothing matches.
pub fn locate_key(text: &str, key: &str) -> (usize, usize) {
    let want: Vec<&str> = key.split('.').collect();
    let mut table: Vec<String> = Vec::new();
    let mut best: Option<(usize, usize, usize)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_start();
        let indent = raw.len() - line.len();
        let path: Vec<String> = if let Some(header) = line.strip_prefix('[') {
            let header = header.trim_start_matches('[');
            let name = header.split(']').next().unwrap_or("");
            table = split_key(name);
            table.clone()
        } else if let Some((k, _)) = line.split_once('=') {
            if line.starts_with('#') {
                continue;
            }
            let mut p = table.clone();
            p.extend(split_key(k));
            p
        } else {
            continue;
        };
        let matched = path.iter().zip(&want).take_while(|(a, b)| a == *b).count();
        if matched == path.len() && matched > 0 && best.map_or(true, |(m, _, _)| matched > m) {
            best = Some((matched, i + 1, indent + 1));
        }
    }
    best.map_or((1, 1), |(_, l, c)| (l, c))
}

fn split_key(k: &str) -> Vec<String> {
    k.split('.')
        .map(|s| s.trim().trim_matches('"').to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn warmup_size(count: usize, initial: usize) -> usize {
    if initial > 0 {
        initial.min(count)
    } else {
        (count.div_ceil(20)).max(2).min(count)
    }
}

/// Semantic checks; each problem is `(dotted key, message)`.
pub fn validate(loaded: &LoadedConfig) -> Vec<(String, String)> {
    let cfg = &loaded.config;
    let mut out = Vec::new();
    let mut bad = |key: &str, msg: String| out.push((key.to_string(), msg));

    if cfg.replications == 0 {
        bad("replications", "must be at least 1".into());
    }
    if cfg.budget.total == 0 {
        bad("budget.total", "must be positive".into());
    }
    if cfg.selection.warmup_reps < 2 {
        bad("selection.warmup_reps", "needs at least 2 replications to estimate variances".into());
    }

    let sizes: Vec<usize> = if cfg.mode == Mode::SurrogateCompare && !cfg.compare.sizes.is_empty() {
        cfg.compare.sizes.clone()
    } else {
        cfg.candidates.count().into_iter().collect()
    };

    match &cfg.candidates {
        CandidateSource::Random {
            count,
            dim,
            latent_dim,
            latent_box,
        } => {
            if *count < 2 {
                bad("candidates.count", "needs at least 2 candidates".into());
            }
            if *dim == 0 {
                bad("candidates.dim", "must be at least 1".into());
            }
            if let Some(l) = latent_dim {
                if l < dim {
                    bad("candidates.latent_dim", format!("must be >= dim ({dim})"));
                }
            }
            if !(latent_box.lower < latent_box.upper) {
                bad("candidates.latent_box", "lower must be below upper".into());
            }
        }
        CandidateSource::File { path } => {
            if !loaded.resolve(path).is_file() {
                bad("candidates.path", format!("file {} does not exist", path.display()));
            }
        }
        CandidateSource::Search {
            prompts,
            search,
            dim,
            latent_dim,
            ..
        } => {
            if prompts.is_empty() {
                bad("candidates.prompts", "needs at least one example prompt".into());
            }
            if let Err(e) = search.validate(prompts.len()) {
                bad("candidates.search", e.to_string());
            }
            if *dim == 0 || dim > latent_dim {
                bad("candidates.dim", format!("must lie in 1..={latent_dim}"));
            }
        }
    }

    match &cfg.oracle {
        OracleConfig::Synthetic {
            noise_std,
            means,
            landscape,
            generated,
        } => {
            if !(noise_std.is_finite() && *noise_std >= 0.0) {
                bad("oracle.noise_std", "must be finite and >= 0".into());
            }
            if let Some(means) = means {
                if let Some(&n) = sizes.iter().find(|&&n| n != means.len()) {
                    bad("oracle.means", format!("has {} entries for {n} candidates", means.len()));
                }
                if means.iter().any(|m| !m.is_finite()) {
                    bad("oracle.means", "must be finite".into());
                }
                if cfg.mode == Mode::TwoStageVsPsk {
                    bad("oracle.means", "refinement needs a landscape over the latent space".into());
                }
            }
            if let (Some(l), Some(d)) = (landscape, cfg.candidates.latent_dim()) {
                if l.dim().is_some_and(|ld| ld != d) {
                    bad("oracle.landscape", format!("dimension {:?} does not match latent dimension {d}", l.dim()));
                }
            }
            match generated {
                GeneratedLandscape::Linear { scale } if !(*scale > 0.0) => {
                    bad("oracle.generated.scale", "must be positive".into())
                }
                GeneratedLandscape::QuadraticBowl { curvature } if !(*curvature > 0.0) => {
                    bad("oracle.generated.curvature", "must be positive".into())
                }
                GeneratedLandscape::MultiModal { peaks, width } if *peaks == 0 || !(*width > 0.0) => {
                    bad("oracle.generated", "needs at least one peak and a positive width".into())
                }
                _ => {}
            }
        }
        OracleConfig::Llm {
            evaluator, baseline, ..
        } => {
            if let Err(e) = evaluator.validate() {
                bad("oracle.evaluator", e.to_string());
            }
            if !loaded.resolve(baseline).is_file() {
                bad("oracle.baseline", format!("file {} does not exist", baseline.display()));
            }
            if cfg.mode == Mode::TwoStageVsPsk {
                bad("oracle.kind", "two-stage-vs-psk needs a synthetic oracle over the latent space".into());
            }
            if matches!(cfg.candidates, CandidateSource::Random { .. }) {
                bad("candidates.source", "random candidates carry no prompt text for the llm oracle".into());
            }
        }
    }

    if matches!(cfg.mode, Mode::SingleRun | Mode::MucbVsPrmucb | Mode::TwoStageVsPsk) {
        for &n in &sizes {
            let t_w = (warmup_size(n, cfg.candidates.initial_count()) * cfg.selection.warmup_reps) as u64;
            if cfg.budget.total <= t_w {
                bad(
                    "budget.total",
                    format!("must exceed the warm-up cost {t_w} for {n} candidates"),
                );
            }
        }
    }

    if cfg.mode == Mode::SurrogateCompare {
        let c = &cfg.compare;
        if !c.sizes.is_empty() && matches!(cfg.candidates, CandidateSource::File { .. }) {
            bad("compare.sizes", "a candidate file has a fixed size; remove sizes".into());
        }
        if !(c.train_fraction > 0.0 && c.train_fraction < 1.0) {
            bad("compare.train_fraction", "must lie in (0, 1)".into());
        }
        for &n in &sizes {
            let train = (c.train_fraction * n as f64).round() as usize;
            if train == 0 || train >= n {
                bad("compare.sizes", format!("{n} candidates leave an empty training or holdout set"));
            }
        }
        if c.train_reps < 2 {
            bad("compare.train_reps", "needs at least 2 to estimate the noise".into());
        }
        if c.holdout_reps == 0 {
            bad("compare.holdout_reps", "must be at least 1".into());
        }
        if c.samples < 2 {
            bad("compare.samples", "needs at least 2 posterior samples".into());
        }
        if !(c.interval > 0.0 && c.interval < 1.0) {
            bad("compare.interval", "must lie in (0, 1)".into());
        }
        if c.models.is_empty() {
            bad("compare.models", "needs at least one model".into());
        }
        let mut names: Vec<&str> = c.models.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            bad("compare.models", "model names must be unique".into());
        }
    }

    if cfg.mode == Mode::TwoStageVsPsk {
        let p = &cfg.psk;
        if p.dims.is_empty() || p.dims.contains(&0) {
            bad("psk.dims", "needs at least one positive dimension".into());
        }
        if p.dims.len() > 1 && !(p.train_fraction > 0.0 && p.train_fraction < 1.0) {
            bad("psk.train_fraction", "must lie in (0, 1)".into());
        }
        if p.fit.starts == 0 {
            bad("psk.fit.starts", "must be at least 1".into());
        }
        if cfg.budget.refinement > 0 && p.local_proposals + p.uniform_proposals == 0 {
            bad("psk.local_proposals", "refinement needs proposals".into());
        }
    }
    out
}
