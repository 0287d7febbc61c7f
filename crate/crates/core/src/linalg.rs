//! Small numerical helpers shared by the modelling modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Neumaier-compensated running sum.
///
/// Replaying the same sequence of additions always produces the same bits,
/// which is what lets the observation ledger be re-derived exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Cholesky factorization that retries with growing diagonal jitter.
///
/// The first attempt adds `base_jitter`; each retry multiplies it by ten,
/// up to six retries.
pub fn cholesky_with_jitter(
    matrix: &DMatrix<f64>,
    base_jitter: f64,
) -> Result<Cholesky<f64, Dyn>> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::dims(n, matrix.ncols(), "cholesky of non-square matrix"));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to cholesky".into()));
    }
    let mut jitter = base_jitter;
    for _ in 0..7 {
        let mut m = matrix.clone();
        if jitter > 0.0 {
            for i in 0..n {
                m[(i, i)] += jitter;
            }
        }
        if let Some(ch) = m.cholesky() {
            return Ok(ch);
        }
        jitter = if jitter > 0.0 { jitter * 10.0 } else { 1e-12 };
    }
    Err(Error::NotPositiveDefinite(format!(
        "{n}x{n} matrix after jitter {jitter:e}"
    )))
}

pub fn mean_diagonal(matrix: &DMatrix<f64>) -> f64 {
    let n = matrix.nrows().min(matrix.ncols());
    if n == 0 {
        return 0.0;
    }
    matrix.diagonal().sum() / n as f64
}

/// Log-determinant from a Cholesky factor.
pub fn log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn standard_normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal distribution function, computed through `erfc` so the
/// lower tail keeps full relative precision.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of the pairwise squared distances, used as an RBF bandwidth.
/// Returns 1.0 when fewer than two distinct points exist.
pub fn median_squared_distance(points: &[DVector<f64>]) -> f64 {
    let mut d = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let v = (&points[i] - &points[j]).norm_squared();
            if v > 0.0 {
                d.push(v);
            }
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
