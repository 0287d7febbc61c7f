//! Result rows, the versioned summary and the files they are written to.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Mode};
use crate::error::{CliError, Result};
use crate::metrics::Stat;

pub const SCHEMA_VERSION: u32 = 1;

/// One `(replication, model or method)` outcome. Columns that do not apply
/// to a mode stay empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultRow {
    pub replication: usize,
    pub seed: u64,
    pub label: String,
    pub candidates: usize,
    pub rmse: Option<f64>,
    pub cr: Option<f64>,
    pub selected: Option<usize>,
    /// True mean of the selected candidate.
    pub selected_mean: Option<f64>,
    /// Largest true candidate mean.
    pub best_mean: Option<f64>,
    pub regret: Option<f64>,
    pub correct: Option<bool>,
    /// Sample mean of the selected candidate's scores.
    pub observed_mean: Option<f64>,
    /// True mean at the final latent point after refinement.
    pub final_value: Option<f64>,
    pub best_observed: Option<f64>,
    pub dimension: Option<usize>,
    /// Cumulative PSK uncertainty `U_I`.
    pub uncertainty: Option<f64>,
    pub evaluations: Option<u64>,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn new(replication: usize, seed: u64, label: &str, candidates: usize) -> Self {
        ResultRow {
            replication,
            seed,
            label: label.to_string(),
            candidates,
            ..ResultRow::default()
        }
    }

    pub fn failed(mut self, error: impl ToString) -> Self {
        self.error = Some(error.to_string());
        self
    }

    fn metrics(&self) -> [(&'static str, Option<f64>); 10] {
        [
            ("rmse", self.rmse),
            ("cr", self.cr),
            ("selected_mean", self.selected_mean),
            ("regret", self.regret),
            ("correct", self.correct.map(|c| if c { 1.0 } else { 0.0 })),
            ("observed_mean", self.observed_mean),
            ("final_value", self.final_value),
            ("best_observed", self.best_observed),
            ("dimension", self.dimension.map(|d| d as f64)),
            ("uncertainty", self.uncertainty),
        ]
    }
}

/// Wall-clock time of one phase; written to `timing.csv` only, so
/// `results.csv` stays reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub replication: usize,
    pub label: String,
    pub candidates: usize,
    pub phase: String,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub candidates: usize,
    pub runs: usize,
    pub failed: usize,
    pub metrics: BTreeMap<String, Stat>,
    /// Most frequent selection, ties to the lowest index.
    pub selected: Option<usize>,
    pub selections: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub mode: Mode,
    pub seed: u64,
    pub seed_offset: u64,
    pub replications: usize,
    pub rows: usize,
    pub failed: usize,
    pub groups: Vec<GroupSummary>,
    pub config: ExperimentConfig,
    /// The config file verbatim; `run summary.json` re-runs from it.
    pub config_text: String,
    pub base_dir: String,
}

/// Groups rows by `(label, candidates)` in first-appearance order.
pub fn aggregate(rows: &[ResultRow]) -> Vec<GroupSummary> {
    let mut order: Vec<(String, usize)> = Vec::new();
    let mut members: BTreeMap<(String, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.label.clone(), r.candidates);
        if !members.contains_key(&key) {
            order.push(key.clone());
        }
        members.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let group = &members[&key];
            let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut selections = BTreeMap::new();
            for r in group {
                for (name, v) in r.metrics() {
                    if let Some(v) = v.filter(|v| v.is_finite()) {
                        values.entry(name.to_string()).or_default().push(v);
                    }
                }
                if let Some(s) = r.selected {
                    *selections.entry(s).or_insert(0) += 1;
                }
            }
            let selected = selections
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(s, _)| *s);
            GroupSummary {
                label: key.0,
                candidates: key.1,
                runs: group.len(),
                failed: group.iter().filter(|r| r.error.is_some()).count(),
                metrics: values.into_iter().filter_map(|(k, v)| Stat::of(&v).map(|s| (k, s))).collect(),
                selected,
                selections,
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let summary: Summary = serde_json::from_str(&text)?;
    if summary.schema != SCHEMA_VERSION {
        return Err(CliError::Report(format!(
            "{}: unsupported schema {}",
            path.display(),
            summary.schema
        )));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str, rep: usize, rmse: f64, selected: usize) -> ResultRow {
        ResultRow {
            rmse: Some(rmse),
            selected: Some(selected),
            correct: Some(selected == 1),
            ..ResultRow::new(rep, rep as u64, label, 10)
        }
    }

    #[test]
    fn groups_keep_order_and_statistics() {
        let rows = vec![
            row("b", 0, 1.0, 1),
            row("a", 0, 2.0, 1),
            row("b", 1, 3.0, 0),
            row("b", 2, 5.0, 1).failed("boom"),
        ];
        let g = aggregate(&rows);
        assert_eq!(g.iter().map(|g| g.label.as_str()).collect::<Vec<_>>(), ["b", "a"]);
        assert_eq!((g[0].runs, g[0].failed), (3, 1));
        assert_eq!(g[0].metrics["rmse"].mean, 3.0);
        assert_eq!(g[0].metrics["correct"].mean, 2.0 / 3.0);
        assert_eq!(g[0].selected, Some(1));
        assert_eq!(g[0].selections[&0], 1);
    }

    #[test]
    fn selection_ties_go_to_lowest_index() {
        let g = aggregate(&[row("x", 0, 0.0, 4), row("x", 1, 0.0, 2)]);
        assert_eq!(g[0].selected, Some(2));
    }

    #[test]
    fn results_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![row("m", 0, 0.25, 1), ResultRow::new(1, 9, "m", 10).failed("oracle, down")];
        write_csv(&path, &rows).unwrap();
        assert_eq!(read_results(&path).unwrap(), rows);
    }
}
