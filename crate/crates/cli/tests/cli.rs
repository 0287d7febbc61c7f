use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use promptsel::scoring::http_request_count;
use promptsel_cli::output::{read_results, read_summary};
use promptsel_cli::{load_config, parse_config, run_experiment, Mode, RunOptions};
use sha2::{Digest, Sha256};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn run_to(config: &str, out: &Path, jobs: usize) -> promptsel_cli::ExperimentOutcome {
    let loaded = load_config(&configs().join(config)).unwrap();
    let opts = RunOptions {
        jobs,
        output: Some(out.to_path_buf()),
        ..RunOptions::default()
    };
    run_experiment(&loaded, &opts).unwrap()
}

#[test]
fn two_candidates_select_the_better_mean() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_to("single-run.toml", dir.path(), 1);
    assert_eq!(out.rows.len(), 3);
    assert!(out.rows.iter().all(|r| r.selected == Some(1) && r.error.is_none()));
    assert_eq!(out.summary.groups[0].selected, Some(1));
    assert_eq!(http_request_count(), 0);
}

#[test]
fn results_are_bit_identical_across_invocations_and_job_counts() {
    for config in ["single-run.toml", "mucb-vs-prmucb.toml", "surrogate-compare.toml", "two-stage-vs-psk.toml"] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_to(config, a.path(), 1);
        run_to(config, b.path(), 3);
        for file in ["results.csv", "summary.json"] {
            assert_eq!(digest(&a.path().join(file)), digest(&b.path().join(file)), "{config} {file}");
        }
    }
    assert_eq!(http_request_count(), 0);
}

#[test]
fn summary_reruns_to_the_same_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_to("mucb-vs-prmucb.toml", a.path(), 2);
    let loaded = load_config(&a.path().join("summary.json")).unwrap();
    let opts = RunOptions {
        output: Some(b.path().to_path_buf()),
        ..RunOptions::default()
    };
    run_experiment(&loaded, &opts).unwrap();
    assert_eq!(digest(&a.path().join("results.csv")), digest(&b.path().join("results.csv")));
    assert_eq!(digest(&a.path().join("summary.json")), digest(&b.path().join("summary.json")));
}

#[test]
fn surrogate_compare_writes_one_row_per_model_size_and_replication() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_to("surrogate-compare.toml", dir.path(), 2);
    let cfg = &out.summary.config;
    assert_eq!(out.summary.mode, Mode::SurrogateCompare);
    assert_eq!(out.rows.len(), cfg.replications * cfg.compare.models.len() * cfg.compare.sizes.len());
    for r in &out.rows {
        assert!(r.rmse.unwrap().is_finite());
        assert!((0.0..=1.0).contains(&r.cr.unwrap()));
    }
    let read = read_results(&dir.path().join("results.csv")).unwrap();
    assert_eq!(read, out.rows);
    let summary = read_summary(&dir.path().join("summary.json")).unwrap();
    assert_eq!(summary.groups.len(), cfg.compare.models.len() * cfg.compare.sizes.len());
    assert!(dir.path().join("timing.csv").is_file());
}

#[test]
fn two_stage_reports_three_methods() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_to("two-stage-vs-psk.toml", dir.path(), 1);
    let labels: Vec<&str> = out.rows.iter().take(3).map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["two-stage", "psk-ei", "random-search"]);
    let psk = &out.rows[1];
    assert_eq!(psk.dimension, Some(2));
    assert!(psk.uncertainty.unwrap() > 0.0);
    assert!(psk.final_value.unwrap().is_finite());
    assert!(dir.path().join("replications/rep-000/refine.csv").is_file());
}

#[test]
fn replication_failures_become_error_rows() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    let text = "mode = \"mucb-vs-prmucb\"\nreplications = 2\n[candidates]\nsource = \"file\"\npath = \"broken.json\"\n\
                [oracle]\nkind = \"synthetic\"\nnoise_std = 0.1\n[budget]\ntotal = 30\n";
    let loaded = parse_config(text, "bad.toml", dir.path()).unwrap();
    let opts = RunOptions {
        output: Some(dir.path().join("out")),
        ..RunOptions::default()
    };
    let out = run_experiment(&loaded, &opts).unwrap();
    assert_eq!(out.rows.len(), 4);
    assert_eq!(out.summary.failed, 4);
    assert!(out.rows.iter().all(|r| r.error.is_some() && r.selected.is_none()));
    assert_eq!(read_results(&dir.path().join("out/results.csv")).unwrap(), out.rows);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_promptsel");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "mode = \"single-run\"\nseed = -1\n").unwrap();
    let o = Command::new(bin).arg("validate").arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert!(stderr.starts_with(&format!("{}:2:", bad.display())), "{stderr}");

    let good = configs().join("single-run.toml");
    assert_eq!(Command::new(bin).arg("validate").arg(&good).status().unwrap().code(), Some(0));
    let out = dir.path().join("run");
    let o = Command::new(bin)
        .args(["run", "--jobs", "2", "--seed-offset", "4", "--output"])
        .arg(&out)
        .arg(&good)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_summary(&out.join("summary.json")).unwrap();
    assert_eq!(summary.seed_offset, 4);
    assert_eq!(read_results(&out.join("results.csv")).unwrap()[0].seed, 5);

    let o = Command::new(bin).arg("report").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stdout).unwrap().contains("pr_mucb"));
    assert!(dir.path().join("report.csv").is_file());
}
