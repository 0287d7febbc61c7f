//! Replication runners for each experiment mode.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use promptsel::ledger::ObservationLog;
use promptsel::posterior::PosteriorEngine;
use promptsel::psk::{
    psk_fit, psk_select_dimension, refine_search, run_observations, write_refinement_csv, PskData, PskModel,
    RefineConfig,
};
use promptsel::scoring::LatentOracle;
use promptsel::selection::{evaluate_with_retry, fit_variance_model, run_mucb_loop, run_prmucb_loop, Method, RunResult};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::config::{LoadedConfig, Mode, NoiseEstimate};
use crate::error::{CliError, Result};
use crate::metrics::{compute_rmse_cr, mean_and_interval};
use crate::output::{
    aggregate, write_csv, write_json, ResultRow, Summary, TimingRow, SCHEMA_VERSION,
};
use crate::setup::{build_instance, make_latent_oracle, make_oracle, stream, stream_rng, Instance};

/// First stream id of the per-model posterior samplers in
/// `surrogate-compare`.
const MODEL_STREAM_BASE: u64 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Replications run concurrently, at most this many at a time.
    pub jobs: usize,
    /// Added to the config seed.
    pub seed_offset: u64,
    /// Overrides the config's output directory.
    pub output: Option<PathBuf>,
    /// Write per-replication run artifacts (traces, logs).
    pub artifacts: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            jobs: 1,
            seed_offset: 0,
            output: None,
            artifacts: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub rows: Vec<ResultRow>,
    pub timings: Vec<TimingRow>,
    pub summary: Summary,
}

#[derive(Debug, Default)]
struct TaskOutput {
    rows: Vec<ResultRow>,
    timings: Vec<TimingRow>,
}

impl TaskOutput {
    fn time(&mut self, row: &ResultRow, phase: &str, ms: f64) {
        self.timings.push(TimingRow {
            replication: row.replication,
            label: row.label.clone(),
            candidates: row.candidates,
            phase: phase.to_string(),
            ms,
        });
    }
}

#[derive(Debug, Clone, Copy)]
struct Task {
    replication: usize,
    size: Option<usize>,
    seed: u64,
}

pub fn method_label(m: Method) -> &'static str {
    match m {
        Method::Mucb => "mucb",
        Method::PrMucb => "pr_mucb",
    }
}

pub fn output_dir(loaded: &LoadedConfig, opts: &RunOptions) -> PathBuf {
    match (&opts.output, &loaded.config.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => loaded.resolve(o),
        (None, None) => loaded.base_dir.join("results"),
    }
}

/// Runs every replication, writes `results.csv`, `timing.csv`,
/// `summary.json` and a copy of the config into the output directory.
pub fn run_experiment(loaded: &LoadedConfig, opts: &RunOptions) -> Result<ExperimentOutcome> {
    let cfg = &loaded.config;
    let dir = output_dir(loaded, opts);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let sizes: Vec<Option<usize>> = if cfg.mode == Mode::SurrogateCompare && !cfg.compare.sizes.is_empty() {
        cfg.compare.sizes.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let base = cfg.seed.wrapping_add(opts.seed_offset);
    let tasks: Vec<Task> = sizes
        .iter()
        .flat_map(|&size| {
            (0..cfg.replications).map(move |replication| Task {
                replication,
                size,
                seed: base.wrapping_add(replication as u64),
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| CliError::Report(format!("thread pool: {e}")))?;
    let artifacts = opts.artifacts.then_some(dir.as_path());
    let outputs: Vec<TaskOutput> = pool.install(|| tasks.par_iter().map(|t| run_task(loaded, *t, artifacts)).collect());

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for o in outputs {
        rows.extend(o.rows);
        timings.extend(o.timings);
    }
    for r in rows.iter().filter(|r| r.error.is_some()) {
        log::warn!(
            "replication {} ({}): {}",
            r.replication,
            r.label,
            r.error.as_deref().unwrap_or_default()
        );
    }
    let base_dir = fs::canonicalize(&loaded.base_dir).unwrap_or_else(|_| loaded.base_dir.clone());
    let summary = Summary {
        schema: SCHEMA_VERSION,
        mode: cfg.mode,
        seed: cfg.seed,
        seed_offset: opts.seed_offset,
        replications: cfg.replications,
        rows: rows.len(),
        failed: rows.iter().filter(|r| r.error.is_some()).count(),
        groups: aggregate(&rows),
        config: cfg.clone(),
        config_text: loaded.text.clone(),
        base_dir: base_dir.display().to_string(),
    };
    write_csv(&dir.join("results.csv"), &rows)?;
    write_csv(&dir.join("timing.csv"), &timings)?;
    write_json(&dir.join("summary.json"), &summary)?;
    let copy = dir.join("config.toml");
    fs::write(&copy, &loaded.text).map_err(|e| CliError::io(&copy, e))?;
    Ok(ExperimentOutcome {
        dir,
        rows,
        timings,
        summary,
    })
}

fn labels(loaded: &LoadedConfig) -> Vec<String> {
    let cfg = &loaded.config;
    match cfg.mode {
        Mode::SingleRun => vec![method_label(cfg.method).into()],
        Mode::MucbVsPrmucb => vec!["mucb".into(), "pr_mucb".into()],
        Mode::SurrogateCompare => cfg.compare.models.iter().map(|m| m.name.clone()).collect(),
        Mode::TwoStageVsPsk => {
            let mut l = vec!["two-stage".to_string(), "psk-ei".into()];
            if cfg.psk.random_search {
                l.push("random-search".into());
            }
            l
        }
    }
}

fn run_task(loaded: &LoadedConfig, task: Task, artifacts: Option<&Path>) -> TaskOutput {
    let instance = match build_instance(loaded, task.size, task.seed) {
        Ok(i) => i,
        Err(e) => {
            let n = task.size.unwrap_or(0);
            return TaskOutput {
                rows: labels(loaded)
                    .iter()
                    .map(|l| ResultRow::new(task.replication, task.seed, l, n).failed(&e))
                    .collect(),
                timings: Vec::new(),
            };
        }
    };
    let rep_dir = artifacts.map(|d| {
        let mut p = d.join("replications").join(format!("rep-{:03}", task.replication));
        if let Some(n) = task.size {
            p = p.join(format!("n-{n}"));
        }
        p
    });
    let mut out = TaskOutput::default();
    match loaded.config.mode {
        Mode::SingleRun => {
            let m = loaded.config.method;
            selection_task(loaded, &instance, task, m, rep_dir.as_deref(), &mut out);
        }
        Mode::MucbVsPrmucb => {
            for m in [Method::Mucb, Method::PrMucb] {
                selection_task(loaded, &instance, task, m, rep_dir.as_deref(), &mut out);
            }
        }
        Mode::SurrogateCompare => compare_task(loaded, &instance, task, &mut out),
        Mode::TwoStageVsPsk => two_stage_task(loaded, &instance, task, rep_dir.as_deref(), &mut out),
    }
    out
}

fn selection_row(instance: &Instance, task: Task, label: &str, result: &RunResult) -> ResultRow {
    let mut row = ResultRow::new(task.replication, task.seed, label, instance.candidates.len());
    row.selected = result.selected;
    row.evaluations = Some(result.log.len() as u64);
    row.observed_mean = result.selected.and_then(|n| result.log.sample_mean(n).ok());
    row.best_observed = result.log.observations().iter().map(|o| o.score).reduce(f64::max);
    if let Some(truth) = &instance.truth {
        let best = truth.best_mean();
        row.best_mean = Some(best);
        if let Some(n) = result.selected {
            row.selected_mean = Some(truth.means[n]);
            row.regret = Some(best - truth.means[n]);
            row.correct = Some(truth.means[n] == best);
        }
    }
    row.error = result.error.clone();
    row
}

fn run_selection(loaded: &LoadedConfig, instance: &Instance, seed: u64, method: Method) -> Result<RunResult> {
    let mut oracle = make_oracle(loaded, instance, seed)?;
    let cfg = &loaded.config;
    Ok(match method {
        Method::Mucb => run_mucb_loop(&instance.candidates, &cfg.selection, cfg.budget.total, &mut oracle, seed)?,
        Method::PrMucb => run_prmucb_loop(&instance.candidates, &cfg.selection, cfg.budget.total, &mut oracle, seed)?,
    })
}

fn selection_task(
    loaded: &LoadedConfig,
    instance: &Instance,
    task: Task,
    method: Method,
    rep_dir: Option<&Path>,
    out: &mut TaskOutput,
) -> Option<RunResult> {
    let label = method_label(method);
    let result = match run_selection(loaded, instance, task.seed, method) {
        Ok(r) => r,
        Err(e) => {
            out.rows
                .push(ResultRow::new(task.replication, task.seed, label, instance.candidates.len()).failed(e));
            return None;
        }
    };
    let mut row = selection_row(instance, task, label, &result);
    if let Some(dir) = rep_dir {
        if let Err(e) = result.write_outputs(dir.join(label)) {
            row.error.get_or_insert_with(|| format!("writing artifacts: {e}"));
        }
    }
    let t = result.timing;
    out.time(&row, "warmup", t.warmup_ms);
    out.time(&row, "tuning", t.tuning_ms);
    out.time(&row, "loop", t.loop_ms);
    out.time(&row, "decision", t.decision_ms);
    out.rows.push(row);
    Some(result)
}

/// Training log, holdout means and noise variances for one replication of
/// the surrogate comparison.
struct CompareData {
    log: ObservationLog,
    test: Vec<usize>,
    holdout: Vec<f64>,
    noise: Vec<f64>,
}

fn compare_data(loaded: &LoadedConfig, instance: &Instance, seed: u64) -> Result<CompareData> {
    let cfg = &loaded.config;
    let c = &cfg.compare;
    let n = instance.candidates.len();
    let retry = &cfg.selection.retry;
    let mut oracle = make_oracle(loaded, instance, seed)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, stream::SPLIT));
    let cut = (c.train_fraction * n as f64).round() as usize;
    let (train, test) = order.split_at(cut.min(n));
    let (mut train, mut test) = (train.to_vec(), test.to_vec());
    train.sort_unstable();
    test.sort_unstable();
    if train.is_empty() || test.is_empty() {
        return Err(CliError::Report(format!("{n} candidates leave an empty training or holdout set")));
    }
    let mut log = ObservationLog::new(n);
    for &i in &train {
        for _ in 0..c.train_reps {
            log.record(i, evaluate_with_retry(&mut oracle, i, retry)?)?;
        }
    }
    let mut holdout = Vec::with_capacity(test.len());
    for &i in &test {
        let mut sum = 0.0;
        for _ in 0..c.holdout_reps {
            sum += evaluate_with_retry(&mut oracle, i, retry)?;
        }
        holdout.push(sum / c.holdout_reps as f64);
    }
    let floor = cfg.selection.variance_floor;
    let variances = train
        .iter()
        .map(|&i| log.sample_variance(i))
        .collect::<promptsel::error::Result<Vec<f64>>>()?;
    let noise = match c.noise {
        NoiseEstimate::Pooled => {
            let pooled = variances.iter().sum::<f64>() / variances.len() as f64;
            vec![pooled.max(floor); n]
        }
        NoiseEstimate::VarianceModel => {
            let z = instance.candidates.soft_prompts();
            let points: Vec<DVector<f64>> = train.iter().map(|&i| z[i].clone()).collect();
            let model = fit_variance_model(&points, &variances, floor)?;
            z.iter().map(|p| model.predict(p)).collect()
        }
    };
    Ok(CompareData {
        log,
        test,
        holdout,
        noise,
    })
}

fn compare_task(loaded: &LoadedConfig, instance: &Instance, task: Task, out: &mut TaskOutput) {
    let c = &loaded.config.compare;
    let n = instance.candidates.len();
    let data = match compare_data(loaded, instance, task.seed) {
        Ok(d) => d,
        Err(e) => {
            for m in &c.models {
                out.rows
                    .push(ResultRow::new(task.replication, task.seed, &m.name, n).failed(&e));
            }
            return;
        }
    };
    for (k, model) in c.models.iter().enumerate() {
        let mut row = ResultRow::new(task.replication, task.seed, &model.name, n);
        let clock = Instant::now();
        let fitted = (|| -> Result<(f64, f64)> {
            let surrogate = model.surrogate.build(instance.candidates.soft_prompts())?;
            let target = surrogate.target(&data.log, &data.noise)?;
            let mut engine = PosteriorEngine::new(model.sampler.clone(), 1);
            let mut rng = stream_rng(task.seed, MODEL_STREAM_BASE + k as u64);
            let set = engine.draw(&target, c.samples, data.log.len() as u64 + 1, &mut rng)?;
            let preds = surrogate.predict_samples(&set.samples)?;
            let (mut mu, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
            for &i in &data.test {
                let values: Vec<f64> = preds.row(i).iter().copied().collect();
                let (m, l, u) = mean_and_interval(&values, c.interval);
                mu.push(m);
                lo.push(l);
                hi.push(u);
            }
            compute_rmse_cr(&mu, &lo, &hi, &data.holdout)
        })();
        let ms = clock.elapsed().as_secs_f64() * 1e3;
        match fitted {
            Ok((rmse, cr)) => {
                row.rmse = Some(rmse);
                row.cr = Some(cr);
                row.evaluations = Some(data.log.len() as u64);
            }
            Err(e) => row = row.failed(e),
        }
        out.time(&row, "posterior", ms);
        out.rows.push(row);
    }
}

fn two_stage_task(loaded: &LoadedConfig, instance: &Instance, task: Task, rep_dir: Option<&Path>, out: &mut TaskOutput) {
    let cfg = &loaded.config;
    let n = instance.candidates.len();
    let stage_dir = rep_dir.map(|d| d.join("two-stage"));
    let before = out.rows.len();
    let timed = out.timings.len();
    let result = selection_task(loaded, instance, task, cfg.method, stage_dir.as_deref(), out);
    if let Some(row) = out.rows.get_mut(before) {
        row.label = "two-stage".into();
        row.final_value = row.selected_mean;
    }
    for t in out.timings.iter_mut().skip(timed) {
        t.label = "two-stage".into();
    }
    let result = match result {
        Some(r) if r.is_complete() => r,
        _ => {
            let msg = "selection stage did not complete";
            out.rows
                .push(ResultRow::new(task.replication, task.seed, "psk-ei", n).failed(msg));
            if cfg.psk.random_search {
                out.rows
                    .push(ResultRow::new(task.replication, task.seed, "random-search", n).failed(msg));
            }
            return;
        }
    };
    let mut row = ResultRow::new(task.replication, task.seed, "psk-ei", n);
    match psk_stage(loaded, instance, task, &result, rep_dir, &mut row, out) {
        Ok(()) => {}
        Err(e) => row = row.failed(e),
    }
    out.rows.push(row);
    if cfg.psk.random_search {
        let mut row = ResultRow::new(task.replication, task.seed, "random-search", n);
        if let Err(e) = random_search_stage(loaded, instance, task, &result, &mut row) {
            row = row.failed(e);
        }
        out.rows.push(row);
    }
}

fn psk_stage(
    loaded: &LoadedConfig,
    instance: &Instance,
    task: Task,
    result: &RunResult,
    rep_dir: Option<&Path>,
    row: &mut ResultRow,
    out: &mut TaskOutput,
) -> Result<()> {
    let cfg = &loaded.config;
    let p = &cfg.psk;
    let truth = instance
        .truth
        .as_ref()
        .ok_or_else(|| CliError::Report("refinement needs a synthetic oracle".into()))?;
    let clock = Instant::now();
    let (data, noise_model) = PskData::from_run(&instance.candidates, &result.log, cfg.selection.variance_floor)?;
    let mut rng = stream_rng(task.seed, stream::PSK);
    let dim = if p.dims.len() == 1 {
        p.dims[0]
    } else {
        let (points, scores) = run_observations(&instance.candidates, &result.log)?;
        psk_select_dimension(&points, &scores, &noise_model, &p.dims, p.train_fraction, &p.fit, &mut rng)?.0
    };
    let fit = psk_fit(&data, dim, &p.fit, &mut rng)?;
    let mut model = PskModel::new(fit.map, data, noise_model)?;
    out.time(row, "psk_fit", clock.elapsed().as_secs_f64() * 1e3);

    let clock = Instant::now();
    let mut oracle = make_latent_oracle(truth, task.seed)?;
    let refine = RefineConfig {
        budget: cfg.budget.refinement,
        local_proposals: p.local_proposals,
        uniform_proposals: p.uniform_proposals,
        latent_box: instance.candidates.latent_box(),
        ridge: p.ridge,
        retry: cfg.selection.retry.clone(),
    };
    let outcome = refine_search(&mut model, &refine, &mut oracle, &mut rng)?;
    out.time(row, "refine", clock.elapsed().as_secs_f64() * 1e3);
    if let Some(dir) = rep_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("refine.csv");
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        write_refinement_csv(&outcome.rows, file)?;
    }
    let land = truth.landscape.as_ref().expect("checked by make_latent_oracle");
    row.final_value = Some(land.value(outcome.best_point.as_slice())?);
    row.best_observed = Some(outcome.best_score);
    row.best_mean = Some(truth.best_mean());
    row.dimension = Some(dim);
    row.uncertainty = Some(outcome.total_uncertainty());
    row.evaluations = Some(result.log.len() as u64 + cfg.budget.refinement as u64);
    Ok(())
}

/// Uniform draws in the latent box with the refinement budget; the final
/// point is the best single observation overall.
fn random_search_stage(
    loaded: &LoadedConfig,
    instance: &Instance,
    task: Task,
    result: &RunResult,
    row: &mut ResultRow,
) -> Result<()> {
    let cfg = &loaded.config;
    let truth = instance
        .truth
        .as_ref()
        .ok_or_else(|| CliError::Report("random search needs a synthetic oracle".into()))?;
    let land = truth
        .landscape
        .as_ref()
        .ok_or_else(|| CliError::Report("random search needs a landscape".into()))?;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for o in result.log.observations() {
        if best.as_ref().map_or(true, |(_, v)| o.score > *v) {
            best = Some((instance.candidates.latent_of(o.candidate).values.clone(), o.score));
        }
    }
    let mut oracle = make_latent_oracle(truth, task.seed)?;
    let mut rng = stream_rng(task.seed, stream::RANDOM_SEARCH);
    let b = instance.candidates.latent_box();
    let dim = instance.candidates.latent_dim();
    for _ in 0..cfg.budget.refinement {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(b.lower..=b.upper)).collect();
        let v = oracle
            .evaluate_latent(&x)
            .map_err(|e| CliError::Report(format!("latent oracle: {e}")))?;
        if best.as_ref().map_or(true, |(_, bv)| v > *bv) {
            best = Some((x, v));
        }
    }
    let (x, v) = best.ok_or_else(|| CliError::Report("nothing was observed".into()))?;
    row.final_value = Some(land.value(&x)?);
    row.best_observed = Some(v);
    row.best_mean = Some(truth.best_mean());
    row.evaluations = Some(result.log.len() as u64 + cfg.budget.refinement as u64);
    Ok(())
}
