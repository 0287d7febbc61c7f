//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Runs with its own harness so the lines always reach stdout.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use promptsel::acquisition::{pr_exact_gradient, pr_gradient_estimate, pr_prob, pr_sga_optimize, PrConfig, PrState};
use promptsel::candidates::{CandidateSet, LatentBox, LatentVector};
use promptsel::error::OracleError;
use promptsel::ledger::ObservationLog;
use promptsel::linalg::standard_normal_vector;
use promptsel::posterior::{hmc_sample, leapfrog, vi_fit, FnDensity, HmcConfig, PhasePoint, ViConfig, ViState};
use promptsel::psk::{
    expected_improvement, psk_log_likelihood, psk_log_likelihood_and_gradient, refine_search, PskData, PskModel,
    ProjectionMap, RefineConfig,
};
use promptsel::scoring::{cosine_similarity, http_request_count, LatentOracle, SyntheticOracle};
use promptsel::selection::{run_mucb_loop, LoopConfig, VarianceModel};
use promptsel::surrogate::{blr_exact_posterior, Activation, FeatureMap, Surrogate, SurrogateSpec};
use promptsel_cli::{load_config, parse_config, run_experiment, RunOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("{:.1}s/{}s", t.as_secs_f64(), limit.as_secs()))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_vec(d: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| r.random_range(-1.0..=1.0)).collect()
}

/// N=20 candidates in 5-D, linear truth with the argmax lifted to a 0.3 gap.
fn consistency_instance(seed: u64) -> (CandidateSet, Vec<f64>, usize) {
    let mut r = rng(seed);
    let latents: Vec<LatentVector> = (0..20).map(|i| LatentVector::new(i, uniform_vec(5, &mut r))).collect();
    let w: Vec<f64> = (0..5).map(|_| 0.2 * r.sample::<f64, _>(StandardNormal)).collect();
    let mut means: Vec<f64> = latents
        .iter()
        .map(|x| x.values.iter().zip(&w).map(|(a, b)| a * b).sum())
        .collect();
    let mut order: Vec<usize> = (0..20).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]));
    means[order[0]] = means[order[1]] + 0.3;
    let set = CandidateSet::from_projection(latents, DMatrix::identity(5, 5), LatentBox::default(), Vec::new()).unwrap();
    (set, means, order[0])
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = LoopConfig::default();
    let mut freq = Vec::new();
    for t in [50u64, 200, 400] {
        let mut correct = 0;
        for rep in 0..15u64 {
            let (set, means, best) = consistency_instance(1000 + rep);
            let mut oracle = SyntheticOracle::with_uniform_noise(means, 0.1, 2000 + rep).unwrap();
            let run = run_mucb_loop(&set, &cfg, t, &mut oracle, 3000 + rep).unwrap();
            correct += usize::from(run.selected == Some(best));
        }
        freq.push(correct);
    }
    let (fast, time) = within(Duration::from_secs(120), start);
    let monotone = freq.windows(2).all(|w| w[0] <= w[1]);
    outcome(
        freq[2] >= 13 && monotone && fast,
        format!("correct at T=50/200/400: {}/{}/{} of 15, {time}", freq[0], freq[1], freq[2]),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cfg = PrConfig {
        starts: 8,
        iterations: 500,
        ..PrConfig::default()
    };
    let mut r = rng(2);
    let mut hits = 0;
    let mut worst: f64 = 1.0;
    for inst in 0..15 {
        let n = r.random_range(2..=10);
        let mut alpha: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        // Every third instance carries a tie at the maximum.
        if inst % 3 == 0 {
            let top = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let other = (alpha.iter().position(|&a| a == top).unwrap() + 1) % n;
            alpha[other] = top;
        }
        let top = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let opt = pr_sga_optimize(&alpha, &cfg, &mut r).unwrap();
        let mass: f64 = pr_prob(&opt.state)
            .iter()
            .zip(&alpha)
            .filter(|(_, &a)| a == top)
            .map(|(p, _)| p)
            .sum();
        worst = worst.min(mass);
        hits += usize::from(mass >= 0.9);
    }
    let (fast, time) = within(Duration::from_secs(60), start);
    outcome(
        hits >= 14 && fast,
        format!("{hits}/15 instances with mass >= 0.9 on the argmax set (min {worst:.4}), {time}"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let state = PrState::new(vec![0.2, 0.9, 0.5, 0.35], 1e-6).unwrap();
    let alpha = [0.4, -0.3, 1.2, 0.7];
    let exact = pr_exact_gradient(&state, &alpha).unwrap();
    let draws = 100_000;
    let mut r = rng(3);
    let mut sum = [0.0; 4];
    let mut sumsq = [0.0; 4];
    for _ in 0..draws {
        let g = pr_gradient_estimate(&state, &alpha, 1, &mut r).unwrap();
        for j in 0..4 {
            sum[j] += g[j];
            sumsq[j] += g[j] * g[j];
        }
    }
    let mut worst: f64 = 0.0;
    for j in 0..4 {
        let m = sum[j] / draws as f64;
        let se = ((sumsq[j] / draws as f64 - m * m) / draws as f64).sqrt();
        worst = worst.max((m - exact[j]).abs() / se);
    }
    let (fast, time) = within(Duration::from_secs(30), start);
    outcome(worst <= 3.0 && fast, format!("max |mean - exact| = {worst:.2} SE, {time}"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = r.random_range(1..=4);
        let inputs: Vec<DVector<f64>> = (0..20).map(|_| standard_normal_vector(d, &mut r)).collect();
        let map = FeatureMap::random_fourier(d, 15, r.random_range(0.5..3.0), &mut r).unwrap();
        let s = Surrogate::new(SurrogateSpec::finite_rank_gp(map.clone()), inputs.clone()).unwrap();
        let y: Vec<f64> = (0..20).map(|_| r.random_range(-1.0..1.0)).collect();
        let sigma2 = r.random_range(0.05..1.0);
        let mut log = ObservationLog::new(20);
        for (n, v) in y.iter().enumerate() {
            log.record(n, *v).unwrap();
        }
        let post = blr_exact_posterior(&s.target(&log, &[sigma2; 20]).unwrap()).unwrap();
        // Function space with an explicit inverse of K + σ²I.
        let phi: Vec<DVector<f64>> = inputs.iter().map(|x| map.apply(x).unwrap()).collect();
        let mut c = DMatrix::from_fn(20, 20, |i, j| phi[i].dot(&phi[j]));
        for i in 0..20 {
            c[(i, i)] += sigma2;
        }
        let inv = c.try_inverse().unwrap();
        let yv = DVector::from_vec(y);
        for _ in 0..5 {
            let fq = map.apply(&standard_normal_vector(d, &mut r)).unwrap();
            let k = DVector::from_iterator(20, phi.iter().map(|p| p.dot(&fq)));
            let mf = (k.transpose() * &inv * &yv)[0];
            let vf = fq.dot(&fq) - (k.transpose() * &inv * &k)[0];
            let (mw, vw) = post.predictive(&fq);
            worst = worst.max((mf - mw).abs()).max((vf - vw).abs());
        }
    }
    let (fast, time) = within(Duration::from_secs(10), start);
    outcome(worst < 1e-8 && fast, format!("max weight/function-space gap {worst:.2e}, {time}"))
}

fn std_normal(dim: usize) -> FnDensity<impl Fn(&DVector<f64>) -> (f64, DVector<f64>)> {
    FnDensity::new(dim, |w: &DVector<f64>| (-0.5 * w.norm_squared(), -w))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let quartic = FnDensity::new(3, |w: &DVector<f64>| {
        (-0.25 * w.iter().map(|x| x.powi(4)).sum::<f64>() - 0.5 * w.norm_squared(), -w.map(|x| x.powi(3)) - w)
    });
    let mut r = rng(5);
    let inv_mass = DVector::from_vec(vec![1.0, 0.5, 2.0]);
    let mut rev: f64 = 0.0;
    for _ in 0..10 {
        let p0 = PhasePoint::new(&quartic, standard_normal_vector(3, &mut r), standard_normal_vector(3, &mut r)).unwrap();
        let p1 = leapfrog(&quartic, &p0, 0.05, 25, &inv_mass).unwrap();
        let mut back = p1.clone();
        back.momentum = -back.momentum;
        let home = leapfrog(&quartic, &back, 0.05, 25, &inv_mass).unwrap();
        rev = rev
            .max((home.position - &p0.position).amax())
            .max((home.momentum + &p0.momentum).amax());
    }

    let cfg = HmcConfig {
        step_size: 0.1,
        leapfrog_steps: 10,
        burn_in: 200,
        adapt_step_size: false,
        ..HmcConfig::default()
    };
    let (set, _) = hmc_sample(&std_normal(1), &DVector::zeros(1), &cfg, 20_000, 0, &mut r).unwrap();
    let xs: Vec<f64> = set.samples.iter().map(|s| s[0]).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;

    let tiny = HmcConfig {
        step_size: 1e-6,
        leapfrog_steps: 1,
        burn_in: 0,
        adapt_step_size: false,
        ..HmcConfig::default()
    };
    let (_, stats) = hmc_sample(&std_normal(2), &DVector::from_vec(vec![0.5, -0.5]), &tiny, 5_000, 0, &mut r).unwrap();
    let acc = stats.acceptance_rate();
    let (fast, time) = within(Duration::from_secs(60), start);
    outcome(
        rev < 1e-8 && mean.abs() < 0.05 && (0.9..=1.1).contains(&var) && acc > 0.999 && fast,
        format!("reversibility {rev:.1e}, mean {mean:.4}, var {var:.4}, acceptance {acc:.5} at eps=1e-6, {time}"),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut r = rng(6);
    let (mut dm, mut dv): (f64, f64) = (0.0, 0.0);
    for _ in 0..5 {
        let x = r.random_range(0.5..2.0);
        let s = Surrogate::new(SurrogateSpec::blr(1), vec![DVector::from_element(1, x)]).unwrap();
        let mut log = ObservationLog::new(1);
        for _ in 0..r.random_range(1..4) {
            log.record(0, r.random_range(-2.0..2.0)).unwrap();
        }
        let noise = r.random_range(0.3..1.5);
        let target = s.target(&log, &[noise]).unwrap();
        let exact = blr_exact_posterior(&target).unwrap();
        let init = ViState::new(DVector::zeros(1), DVector::from_element(1, -1.0)).unwrap();
        let st = vi_fit(&target, init, &ViConfig::default(), &mut r).unwrap();
        dm = dm.max((st.mean[0] - exact.mean[0]).abs());
        dv = dv.max((st.std()[0].powi(2) - exact.covariance[(0, 0)]).abs());
    }
    let (fast, time) = within(Duration::from_secs(60), start);
    outcome(
        dm < 0.02 && dv < 0.05 && fast,
        format!("max mean error {dm:.4}, max variance error {dv:.4} over 5 instances, {time}"),
    )
}

fn points(n: usize, d: usize, r: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    (0..n).map(|_| DVector::from_vec(uniform_vec(d, r))).collect()
}

/// Dense `(N + I)`-block predictor with an explicit inverse.
fn psk_dense(model: &PskModel, x: &DVector<f64>) -> (f64, f64) {
    let map = model.map();
    let d = model.data();
    let (extra_x, extra_v) = model.additional();
    let feats: Vec<DVector<f64>> = d.inputs.iter().chain(extra_x).map(|p| map.apply(p).unwrap()).collect();
    let n = feats.len();
    let mut c = DMatrix::from_fn(n, n, |i, j| feats[i].dot(&feats[j]));
    for i in 0..d.len() {
        c[(i, i)] += d.noise[i] / d.counts[i];
    }
    for (k, p) in extra_x.iter().enumerate() {
        c[(d.len() + k, d.len() + k)] += model.noise_model().predict(p);
    }
    let inv = c.try_inverse().unwrap();
    let y = DVector::from_iterator(n, d.means.iter().chain(extra_v).copied());
    let a = map.apply(x).unwrap();
    let k = DVector::from_iterator(n, feats.iter().map(|f| f.dot(&a)));
    ((k.transpose() * &inv * y)[0], a.dot(&a) - (k.transpose() * &inv * &k)[0])
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut r = rng(7);
    let mut dense_gap: f64 = 0.0;
    for _ in 0..5 {
        let inputs = points(10, 3, &mut r);
        let means = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
        let counts = (0..10).map(|_| r.random_range(1..5) as f64).collect();
        let noise = (0..10).map(|_| r.random_range(0.01..0.2)).collect();
        let data = PskData::new(inputs, means, counts, noise).unwrap();
        let map = ProjectionMap::random(vec![3, 12, 3], Activation::Tanh, 1.0, &mut r).unwrap();
        let mut model = PskModel::new(map, data, VarianceModel::constant(0.03, 1e-8)).unwrap();
        for p in points(4, 3, &mut r) {
            model.append(p, r.random_range(-1.0..1.0)).unwrap();
        }
        for x in points(10, 3, &mut r) {
            let (mu, var) = model.predict(&x).unwrap();
            let (mo, vo) = psk_dense(&model, &x);
            dense_gap = dense_gap.max((mu - mo).abs()).max((var - vo.max(0.0)).abs());
        }
    }

    let map = ProjectionMap::linear(&DMatrix::identity(3, 3));
    let xs = vec![DVector::from_vec(vec![1.0, 0.0, 0.0]), DVector::from_vec(vec![0.0, 1.0, 0.0])];
    let data = PskData::new(xs.clone(), vec![0.7, -0.2], vec![1.0, 1.0], vec![1e-12, 1e-12]).unwrap();
    let model = PskModel::new(map, data, VarianceModel::constant(1e-12, 1e-12)).unwrap();
    let (mu_i, var_i) = model.predict(&xs[0]).unwrap();
    let interpolates = (mu_i - 0.7).abs() < 1e-9 && var_i < 1e-9;
    let far = DVector::from_vec(vec![0.0, 0.0, 2.0]);
    let (mu_f, var_f) = model.predict(&far).unwrap();
    let reverts = mu_f.abs() < 1e-12 && (var_f - far.norm_squared()).abs() < 1e-12;

    let inputs = points(6, 3, &mut r);
    let data = PskData::new(
        inputs,
        (0..6).map(|_| r.random_range(-1.0..1.0)).collect(),
        vec![2.0; 6],
        (0..6).map(|_| r.random_range(0.02..0.2)).collect(),
    )
    .unwrap();
    let map = ProjectionMap::random(vec![3, 6, 2], Activation::Tanh, 1.0, &mut r).unwrap();
    let (_, grad) = psk_log_likelihood_and_gradient(&map, &data).unwrap();
    let mut fd_err: f64 = 0.0;
    let h = 1e-5;
    for i in 0..map.params().len() {
        let mut p = map.params().to_vec();
        p[i] += h;
        let mut up = map.clone();
        up.set_params(&p).unwrap();
        p[i] -= 2.0 * h;
        let mut down = map.clone();
        down.set_params(&p).unwrap();
        let fd = (psk_log_likelihood(&up, &data).unwrap() - psk_log_likelihood(&down, &data).unwrap()) / (2.0 * h);
        fd_err = fd_err.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3));
    }
    let (_, time) = within(Duration::from_secs(60), start);
    outcome(
        dense_gap < 1e-8 && interpolates && reverts && fd_err < 1e-4,
        format!(
            "dense gap {dense_gap:.1e}, interpolation {interpolates}, prior reversion {reverts}, gradient rel. error {fd_err:.1e}, {time}"
        ),
    )
}

/// `v(X) = (A X)ᵀ w + ε` on the latent box.
struct ProjectedLinear {
    a: DMatrix<f64>,
    w: DVector<f64>,
    noise: f64,
    rng: ChaCha8Rng,
}

impl ProjectedLinear {
    fn mean(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x).dot(&self.w)
    }
}

impl LatentOracle for ProjectedLinear {
    fn evaluate_latent(&mut self, x: &[f64]) -> Result<f64, OracleError> {
        let m = self.mean(&DVector::from_column_slice(x));
        Ok(m + self.noise * self.rng.sample::<f64, _>(StandardNormal))
    }
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let (d_star, latent, n0, reps, noise) = (3usize, 10usize, 30usize, 3usize, 0.05f64);
    let mut r = rng(8);
    let a = DMatrix::from_fn(d_star, latent, |_, _| r.sample::<f64, _>(StandardNormal) / (latent as f64).sqrt());
    let w = DVector::from_fn(d_star, |_, _| r.sample::<f64, _>(StandardNormal));
    let mut oracle = ProjectedLinear {
        a: a.clone(),
        w,
        noise,
        rng: rng(80),
    };
    let inputs = points(n0, latent, &mut r);
    let mut means = Vec::new();
    for x in &inputs {
        let s: f64 = (0..reps).map(|_| oracle.evaluate_latent(x.as_slice()).unwrap()).sum();
        means.push(s / reps as f64);
    }
    let data = PskData::new(inputs, means, vec![reps as f64; n0], vec![noise * noise; n0]).unwrap();
    let noise_model = VarianceModel::constant(noise * noise, 1e-12);
    let mut model = PskModel::new(ProjectionMap::linear(&a), data, noise_model).unwrap();
    let cfg = RefineConfig {
        budget: 200,
        local_proposals: 256,
        uniform_proposals: 256,
        ..RefineConfig::default()
    };
    let out = refine_search(&mut model, &cfg, &mut oracle, &mut r).unwrap();
    let u = |i: usize| out.cumulative_uncertainty[i - 1];
    let sizes = [25usize, 50, 100, 200];
    let scaled: Vec<f64> = sizes.iter().map(|&i| u(i) / (d_star as f64 * (i as f64).ln())).collect();
    let spread = scaled.iter().copied().fold(0.0, f64::max) / scaled.iter().copied().fold(f64::INFINITY, f64::min);
    let doubling: Vec<f64> = sizes.windows(2).map(|p| u(p[1]) / u(p[0])).collect();
    let (fast, time) = within(Duration::from_secs(120), start);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join("/");
    outcome(
        spread <= 3.0 && doubling.iter().all(|&q| q < 2.0) && fast,
        format!(
            "U_I/(D* log I) at I=25/50/100/200: {} (max/min {spread:.2}), U_2I/U_I: {}, {time}",
            fmt(&scaled),
            fmt(&doubling)
        ),
    )
}

const SHAPE_CONFIG: &str = r#"
mode = "surrogate-compare"
seed = 90
replications = 20

[candidates]
source = "random"
count = 200
dim = 50

[oracle]
kind = "synthetic"
noise_std = 0.1

[oracle.generated]
kind = "linear"
scale = 0.2

[compare]
sizes = [50, 100, 200]
train_fraction = 0.7
train_reps = 5
holdout_reps = 50
samples = 100
interval = 0.9

[[compare.models]]
name = "blr"
surrogate = { kind = "blr" }
sampler = { kind = "exact" }
"#;

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let loaded = parse_config(SHAPE_CONFIG, "shape.toml", dir.path()).unwrap();
    let opts = RunOptions {
        output: Some(dir.path().join("out")),
        artifacts: false,
        ..RunOptions::default()
    };
    let out = run_experiment(&loaded, &opts).unwrap();
    let groups = &out.summary.groups;
    let rmse: Vec<f64> = groups.iter().map(|g| g.metrics["rmse"].mean).collect();
    let cr = groups[2].metrics["cr"].mean;
    let decreasing = rmse.windows(2).all(|w| w[1] < w[0]);
    let (fast, time) = within(Duration::from_secs(300), start);
    outcome(
        out.summary.failed == 0 && decreasing && (0.80..=1.0).contains(&cr) && fast,
        format!(
            "RMSE at N=50/100/200: {:.4}/{:.4}/{:.4}, CR at N=200: {cr:.3}, {time}",
            rmse[0], rmse[1], rmse[2]
        ),
    )
}

fn criterion_10() -> Outcome {
    let ei = expected_improvement(0.4, 1.0, 0.4);
    let cos = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    let s = Surrogate::new(SurrogateSpec::blr(1), vec![DVector::from_element(1, 1.0)]).unwrap();
    let mut log = ObservationLog::new(1);
    log.record(0, 2.0).unwrap();
    let post = blr_exact_posterior(&s.target(&log, &[1.0]).unwrap()).unwrap();
    let (m, v) = (post.mean[0], post.covariance[(0, 0)]);
    outcome(
        (ei - 0.398942).abs() <= 1e-6 && (cos - 0.974632).abs() <= 1e-6 && (m - 1.0).abs() <= 1e-12 && (v - 0.5).abs() <= 1e-12,
        format!("EI {ei:.6}, cosine {cos:.6}, BLR posterior N({m}, {v})"),
    )
}

fn hash(path: &Path) -> String {
    Sha256::digest(fs::read(path).unwrap())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn criterion_11() -> Outcome {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut names: Vec<_> = fs::read_dir(&configs)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    names.sort();
    let mut modes = Vec::new();
    let mut same = true;
    for path in &names {
        let loaded = load_config(path).unwrap();
        let mut digests = Vec::new();
        for jobs in [1, 4] {
            let dir = tempfile::tempdir().unwrap();
            let opts = RunOptions {
                jobs,
                output: Some(dir.path().to_path_buf()),
                artifacts: false,
                ..RunOptions::default()
            };
            run_experiment(&loaded, &opts).unwrap();
            digests.push((hash(&dir.path().join("results.csv")), hash(&dir.path().join("summary.json"))));
        }
        same &= digests[0] == digests[1];
        modes.push(loaded.config.mode);
    }
    let all_modes = [
        promptsel_cli::Mode::SingleRun,
        promptsel_cli::Mode::SurrogateCompare,
        promptsel_cli::Mode::MucbVsPrmucb,
        promptsel_cli::Mode::TwoStageVsPsk,
    ]
    .iter()
    .all(|m| modes.contains(m));
    let offline = http_request_count() == 0;
    outcome(
        same && all_modes && offline,
        format!("{} configs covering every mode, double-run hashes equal: {same}, network requests: {}", names.len(), http_request_count()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("consistency of the sequential stage", criterion_1),
        ("PR-M-UCB concentrates on the M-UCB argmax", criterion_2),
        ("REINFORCE gradient is unbiased", criterion_3),
        ("GP weight/function-space duality", criterion_4),
        ("HMC correctness", criterion_5),
        ("VI recovers the conjugate posterior", criterion_6),
        ("PSK predictor, limits and gradient", criterion_7),
        ("PSK cumulative uncertainty grows like D* log I", criterion_8),
        ("surrogate comparison shape on a synthetic oracle", criterion_9),
        ("closed-form spot checks", criterion_10),
        ("determinism of synthetic modes", criterion_11),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("criterion_{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        let o = run();
        failed += usize::from(!o.pass);
        println!("{:<12} {} {name}: {}", id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
