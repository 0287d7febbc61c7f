//! Aggregation over finished experiment directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};
use crate::output::{aggregate, read_results, read_summary, write_csv};

/// One group of one experiment, flattened for `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub experiment: String,
    pub mode: String,
    pub label: String,
    pub candidates: usize,
    pub runs: usize,
    pub failed: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Every directory under `root` (inclusive) holding a `summary.json`,
/// in sorted order.
pub fn find_experiments(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join("summary.json").is_file() && dir.join("results.csv").is_file() {
            found.push(dir.clone());
        }
        let entries = fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(&dir, e))?;
            let path = entry.path();
            if path.is_dir() && path.file_name().is_some_and(|n| n != "replications") {
                stack.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Re-aggregates `results.csv` of every experiment under `root`, writes
/// `report.csv` there and returns the rows.
pub fn build_report(root: &Path) -> Result<Vec<ReportRow>> {
    let experiments = find_experiments(root)?;
    if experiments.is_empty() {
        return Err(CliError::Report(format!("no experiment under {}", root.display())));
    }
    let mut rows = Vec::new();
    for dir in experiments {
        let summary = read_summary(&dir.join("summary.json"))?;
        let results = read_results(&dir.join("results.csv"))?;
        let name = dir
            .strip_prefix(root)
            .ok()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| ".".to_string(), |p| p.display().to_string());
        let mode = serde_json::to_value(summary.mode)?
            .as_str()
            .unwrap_or_default()
            .to_string();
        for g in aggregate(&results) {
            for (metric, s) in &g.metrics {
                rows.push(ReportRow {
                    experiment: name.clone(),
                    mode: mode.clone(),
                    label: g.label.clone(),
                    candidates: g.candidates,
                    runs: g.runs,
                    failed: g.failed,
                    metric: metric.clone(),
                    mean: s.mean,
                    std: s.std,
                    count: s.count,
                });
            }
        }
    }
    write_csv(&root.join("report.csv"), &rows)?;
    Ok(rows)
}

/// Plain-text table with one line per metric.
pub fn format_table(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:<18} {:<14} {:>6} {:>5} {:<14} {:>12} {:>12}",
        "experiment", "mode", "label", "N", "runs", "metric", "mean", "std"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<24} {:<18} {:<14} {:>6} {:>5} {:<14} {:>12.6} {:>12.6}",
            r.experiment, r.mode, r.label, r.candidates, r.runs, r.metric, r.mean, r.std
        );
    }
    out
}
