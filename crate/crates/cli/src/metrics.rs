//! Holdout accuracy of surrogate predictions and replication statistics.

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// `(RMSE, CR)`: root mean squared error of `predictions` against
/// `holdout`, and the fraction of holdout values inside
/// `[lower_n, upper_n]`.
pub fn compute_rmse_cr(predictions: &[f64], lower: &[f64], upper: &[f64], holdout: &[f64]) -> Result<(f64, f64)> {
    let n = holdout.len();
    if n == 0 {
        return Err(CliError::Report("empty holdout set".into()));
    }
    if predictions.len() != n || lower.len() != n || upper.len() != n {
        return Err(CliError::Report(format!(
            "length mismatch: {} predictions, {} lower, {} upper, {n} holdout values",
            predictions.len(),
            lower.len(),
            upper.len()
        )));
    }
    let se: f64 = predictions.iter().zip(holdout).map(|(p, v)| (p - v).powi(2)).sum();
    let covered = (0..n).filter(|&i| lower[i] <= holdout[i] && holdout[i] <= upper[i]).count();
    Ok(((se / n as f64).sqrt(), covered as f64 / n as f64))
}

/// Linear-interpolation sample quantile of ascending `sorted`.
pub fn sample_quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and the central `level` interval of `values`.
pub fn mean_and_interval(values: &[f64], level: f64) -> (f64, f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (mean, sample_quantile(&sorted, tail), sample_quantile(&sorted, 1.0 - tail))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation, zero for a single value.
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, count: n })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let v = [0.1, 0.5, 0.9];
        assert_eq!(compute_rmse_cr(&v, &[0.0; 3], &[1.0; 3], &v).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn constant_offset() {
        let v = [0.1, 0.5, 0.9];
        let p: Vec<f64> = v.iter().map(|x| x + 0.1).collect();
        let (rmse, _) = compute_rmse_cr(&p, &[0.0; 3], &[1.0; 3], &v).unwrap();
        assert!((rmse - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mixed_case() {
        let v = [0.0, 0.0, 0.0];
        let p = [0.1, -0.2, 0.2];
        let (rmse, cr) = compute_rmse_cr(&p, &[-0.1, -0.1, -0.1], &[0.1, 0.1, -0.05], &v).unwrap();
        assert!((rmse - (0.03f64).sqrt()).abs() < 1e-12);
        assert!((rmse - 0.1732).abs() < 1e-4);
        assert!((cr - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_mismatched_inputs_fail() {
        assert!(compute_rmse_cr(&[], &[], &[], &[]).is_err());
        assert!(compute_rmse_cr(&[1.0], &[0.0], &[2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let s: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(sample_quantile(&s, 0.05), 5.0);
        assert_eq!(sample_quantile(&[1.0, 2.0], 0.5), 1.5);
        let (m, lo, hi) = mean_and_interval(&s, 0.9);
        assert_eq!(m, 50.0);
        assert!((lo - 5.0).abs() < 1e-12 && (hi - 95.0).abs() < 1e-12);
    }

    #[test]
    fn stats() {
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.count), (2.0, 2));
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(Stat::of(&[4.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }
}
