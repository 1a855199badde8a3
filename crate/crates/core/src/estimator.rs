//! Scaled covariance estimates from ensembles, with error bars, and a
//! normality check of the scaled slow iterate.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::engine::EnsembleCheckpoint;
use crate::error::{Error, Result};
use crate::linalg::{block2, Matrix, Vector};

pub const MIN_SAMPLES_FOR_ERRORS: usize = 30;
pub const MIN_SAMPLES_FOR_NORMALITY: usize = 100;

/// Three covariance blocks, used both for estimates and for their standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledCovariances {
    pub sigma11: Matrix,
    pub sigma12: Matrix,
    pub sigma22: Matrix,
}

impl ScaledCovariances {
    pub fn joint(&self) -> Matrix {
        block2(&self.sigma11, &self.sigma12, &self.sigma12.transpose(), &self.sigma22)
    }
}

fn check_shapes(theta_hat: &Matrix, r_hat: &Matrix) -> Result<usize> {
    if theta_hat.nrows() != r_hat.nrows() {
        return Err(Error::Dimension("theta and r sample counts differ".into()));
    }
    Ok(theta_hat.nrows())
}

/// Uncentered second moment of rows, divided by `scale`.
fn moment(x: &Matrix, y: &Matrix, scale: f64) -> Matrix {
    let count = x.nrows() as f64;
    Matrix::from_fn(x.ncols(), y.ncols(), |i, j| {
        let mut acc = 0.0;
        for row in 0..x.nrows() {
            acc += x[(row, i)] * y[(row, j)];
        }
        acc / count / scale
    })
}

/// Standard error of the mean of `x_i y_j / scale` over rows.
fn moment_se(x: &Matrix, y: &Matrix, scale: f64) -> Matrix {
    let count = x.nrows() as f64;
    Matrix::from_fn(x.ncols(), y.ncols(), |i, j| {
        let mut sum = 0.0;
        for row in 0..x.nrows() {
            sum += x[(row, i)] * y[(row, j)] / scale;
        }
        let mean = sum / count;
        let mut ss = 0.0;
        for row in 0..x.nrows() {
            let d = x[(row, i)] * y[(row, j)] / scale - mean;
            ss += d * d;
        }
        (ss / (count - 1.0)).sqrt() / count.sqrt()
    })
}

/// `beta^{-1} mean(theta theta')`, `beta^{-1} mean(theta r')`, `gamma^{-1} mean(r r')`.
/// Rows of the sample matrices are replicas.
pub fn scaled_covariances(theta_hat: &Matrix, r_hat: &Matrix, beta: f64, gamma: f64) -> Result<ScaledCovariances> {
    let count = check_shapes(theta_hat, r_hat)?;
    if count < 2 {
        return Err(Error::InsufficientSamples { got: count, need: 2 });
    }
    Ok(ScaledCovariances {
        sigma11: moment(theta_hat, theta_hat, beta),
        sigma12: moment(theta_hat, r_hat, beta),
        sigma22: moment(r_hat, r_hat, gamma),
    })
}

/// Entrywise standard errors of [`scaled_covariances`].
pub fn standard_errors(theta_hat: &Matrix, r_hat: &Matrix, beta: f64, gamma: f64) -> Result<ScaledCovariances> {
    let count = check_shapes(theta_hat, r_hat)?;
    if count < MIN_SAMPLES_FOR_ERRORS {
        return Err(Error::InsufficientSamples { got: count, need: MIN_SAMPLES_FOR_ERRORS });
    }
    Ok(ScaledCovariances {
        sigma11: moment_se(theta_hat, theta_hat, beta),
        sigma12: moment_se(theta_hat, r_hat, beta),
        sigma22: moment_se(r_hat, r_hat, gamma),
    })
}

/// Estimate and standard errors at one ensemble checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub k: u64,
    pub estimate: ScaledCovariances,
    pub standard_error: ScaledCovariances,
}

pub fn estimate_checkpoint(cp: &EnsembleCheckpoint) -> Result<CovarianceEstimate> {
    Ok(CovarianceEstimate {
        k: cp.k,
        estimate: scaled_covariances(&cp.theta_hat, &cp.r_hat, cp.beta, cp.gamma)?,
        standard_error: standard_errors(&cp.theta_hat, &cp.r_hat, cp.beta, cp.gamma)?,
    })
}

/// How a relative tolerance and a multiple of the standard error combine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    /// `|est - pred| <= max(rel |pred|, z se)`
    Max { relative: f64, standard_errors: f64 },
    /// `|est - pred| <= rel |pred| + z se`
    Sum { relative: f64, standard_errors: f64 },
}

impl Tolerance {
    pub fn allowance(&self, predicted: f64, se: f64) -> f64 {
        match *self {
            Tolerance::Max { relative, standard_errors } => (relative * predicted.abs()).max(standard_errors * se),
            Tolerance::Sum { relative, standard_errors } => relative * predicted.abs() + standard_errors * se,
        }
    }

    /// Largest ratio of error to allowance over all entries; `<= 1` means within tolerance.
    pub fn worst_ratio(&self, estimate: &Matrix, se: &Matrix, predicted: &Matrix) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..estimate.nrows() {
            for j in 0..estimate.ncols() {
                let err = (estimate[(i, j)] - predicted[(i, j)]).abs();
                let allow = self.allowance(predicted[(i, j)], se[(i, j)]);
                let ratio = if allow > 0.0 {
                    err / allow
                } else if err == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst = worst.max(ratio);
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    /// KS distance of the squared Mahalanobis distances from chi-square(n).
    pub ks_statistic: f64,
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
    pub sample_count: usize,
}

impl NormalityReport {
    /// 1% critical value of the one-sample KS distance.
    pub fn ks_threshold(&self) -> f64 {
        1.63 / (self.sample_count as f64).sqrt()
    }

    pub fn skewness_threshold(&self) -> f64 {
        4.0 * (6.0 / self.sample_count as f64).sqrt()
    }

    pub fn kurtosis_threshold(&self) -> f64 {
        4.0 * (24.0 / self.sample_count as f64).sqrt()
    }

    pub fn ks_passed(&self) -> bool {
        self.ks_statistic < self.ks_threshold()
    }

    pub fn skewness_passed(&self) -> bool {
        self.skewness.iter().all(|s| s.abs() < self.skewness_threshold())
    }

    pub fn kurtosis_passed(&self) -> bool {
        self.excess_kurtosis.iter().all(|s| s.abs() < self.kurtosis_threshold())
    }

    pub fn passed(&self) -> bool {
        self.ks_passed() && self.skewness_passed() && self.kurtosis_passed()
    }

    /// `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "sample_count = {}", self.sample_count);
        let _ = writeln!(out, "ks_statistic = {:.16e}", self.ks_statistic);
        let _ = writeln!(out, "ks_threshold = {:.16e}", self.ks_threshold());
        let _ = writeln!(out, "skewness = {}", join(&self.skewness));
        let _ = writeln!(out, "skewness_threshold = {:.16e}", self.skewness_threshold());
        let _ = writeln!(out, "excess_kurtosis = {}", join(&self.excess_kurtosis));
        let _ = writeln!(out, "kurtosis_threshold = {:.16e}", self.kurtosis_threshold());
        let _ = writeln!(out, "passed = {}", self.passed());
        out
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["sample_count".to_string(), "ks_statistic".to_string()];
        cols.extend((0..self.skewness.len()).map(|i| format!("skewness_{i}")));
        cols.extend((0..self.excess_kurtosis.len()).map(|i| format!("excess_kurtosis_{i}")));
        cols.push("passed".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.sample_count.to_string(), format!("{:.16e}", self.ks_statistic)];
        cols.extend(self.skewness.iter().map(|x| format!("{x:.16e}")));
        cols.extend(self.excess_kurtosis.iter().map(|x| format!("{x:.16e}")));
        cols.push(self.passed().to_string());
        cols.join(",")
    }
}

/// One-sample KS distance of `values` against `cdf`.
pub fn ks_distance(values: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let count = values.len() as f64;
    let mut worst = 0.0f64;
    for (i, &x) in values.iter().enumerate() {
        let f = cdf(x);
        worst = worst.max((i + 1) as f64 / count - f).max(f - i as f64 / count);
    }
    worst
}

fn skew_kurtosis(values: &[f64]) -> (f64, f64) {
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in values {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= count;
    m3 /= count;
    m4 /= count;
    if m2 == 0.0 {
        return (0.0, -3.0);
    }
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

/// Tests whether `beta^{-1/2} theta_hat` looks like `N(0, predicted)`.
/// Rows of `theta_hat` are replicas.
pub fn normality_check(theta_hat: &Matrix, beta: f64, predicted: &Matrix) -> Result<NormalityReport> {
    let (count, n) = theta_hat.shape();
    if predicted.nrows() != n || predicted.ncols() != n {
        return Err(Error::Dimension(format!("predicted covariance must be {n}x{n}")));
    }
    if count < MIN_SAMPLES_FOR_NORMALITY {
        return Err(Error::InsufficientSamples { got: count, need: MIN_SAMPLES_FOR_NORMALITY });
    }
    let chol = predicted.clone().cholesky().ok_or(Error::SingularPrediction)?;
    let l = chol.l();
    if l.diagonal().iter().any(|&d| !(d > 1e-12 * predicted.norm().max(f64::MIN_POSITIVE))) {
        return Err(Error::SingularPrediction);
    }
    let dist = ChiSquared::new(n as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let scale = beta.sqrt();

    let mut whitened = Matrix::zeros(count, n);
    let mut d2 = Vec::with_capacity(count);
    for row in 0..count {
        let x = Vector::from_fn(n, |j, _| theta_hat[(row, j)] / scale);
        let y = l.solve_lower_triangular(&x).ok_or(Error::SingularPrediction)?;
        d2.push(y.norm_squared());
        whitened.row_mut(row).copy_from(&y.transpose());
    }
    let ks_statistic = ks_distance(&mut d2, |x| dist.cdf(x));
    let (skewness, excess_kurtosis) = (0..n)
        .map(|j| skew_kurtosis(whitened.column(j).as_slice()))
        .unzip();
    Ok(NormalityReport { ks_statistic, skewness, excess_kurtosis, sample_count: count })
}
