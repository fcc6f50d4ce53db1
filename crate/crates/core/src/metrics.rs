//! Scoring statistics for held-out predictions: MAE, RMSE, CRPS, interval
//! score and empirical coverage.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

fn check_lengths(what: &str, lens: &[usize]) -> Result<usize> {
    let n = lens[0];
    if lens.iter().any(|&l| l != n) {
        return Err(Error::Shape(format!("{what}: length mismatch {lens:?}")));
    }
    if n == 0 {
        return Err(Error::InsufficientData(format!("{what}: no points")));
    }
    Ok(n)
}

pub fn mae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    let n = check_lengths("mae", &[truth.len(), pred.len()])?;
    Ok(truth.iter().zip(pred).map(|(t, p)| (t - p).abs()).sum::<f64>() / n as f64)
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    let n = check_lengths("rmse", &[truth.len(), pred.len()])?;
    Ok((truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / n as f64).sqrt())
}

#[inline]
fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

#[inline]
fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// CRPS of a single Gaussian forecast `N(mean, variance)` against `y`.
pub fn crps_gaussian_point(y: f64, mean: f64, variance: f64) -> Result<f64> {
    if !variance.is_finite() || variance <= 0.0 {
        return Err(Error::Parameter(format!("CRPS needs a positive variance, got {variance}")));
    }
    let s = variance.sqrt();
    let z = (y - mean) / s;
    Ok(s * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - 1.0 / std::f64::consts::PI.sqrt()))
}

/// Mean Gaussian CRPS over a set of forecasts.
pub fn crps_gaussian(truth: &[f64], mean: &[f64], variance: &[f64]) -> Result<f64> {
    let n = check_lengths("crps", &[truth.len(), mean.len(), variance.len()])?;
    let mut total = 0.0;
    for i in 0..n {
        total += crps_gaussian_point(truth[i], mean[i], variance[i])?;
    }
    Ok(total / n as f64)
}

/// Interval score of a central `(1 - alpha)` interval.
pub fn interval_score_point(y: f64, lo: f64, hi: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if lo > hi {
        return Err(Error::Parameter(format!("inverted interval [{lo}, {hi}]")));
    }
    let mut s = hi - lo;
    if y < lo {
        s += 2.0 / alpha * (lo - y);
    }
    if y > hi {
        s += 2.0 / alpha * (y - hi);
    }
    Ok(s)
}

pub fn interval_score(truth: &[f64], lo: &[f64], hi: &[f64], alpha: f64) -> Result<f64> {
    let n = check_lengths("interval score", &[truth.len(), lo.len(), hi.len()])?;
    let mut total = 0.0;
    for i in 0..n {
        total += interval_score_point(truth[i], lo[i], hi[i], alpha)?;
    }
    Ok(total / n as f64)
}

/// Fraction of truths inside `[lo, hi]`, endpoints inclusive.
pub fn coverage(truth: &[f64], lo: &[f64], hi: &[f64]) -> Result<f64> {
    let n = check_lengths("coverage", &[truth.len(), lo.len(), hi.len()])?;
    if lo.iter().zip(hi).any(|(l, h)| l > h) {
        return Err(Error::Parameter("inverted interval".into()));
    }
    let inside = (0..n).filter(|&i| lo[i] <= truth[i] && truth[i] <= hi[i]).count();
    Ok(inside as f64 / n as f64)
}

/// Wall-clock phases, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub nn_build: f64,
    pub train: f64,
    pub predict: f64,
}

impl Timings {
    pub fn total(&self) -> f64 {
        self.nn_build + self.train + self.predict
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub crps: f64,
    pub int_score: f64,
    pub coverage: f64,
    pub n_test: usize,
    pub timings: Timings,
}

impl MetricsReport {
    /// Score predictions with intervals at level `1 - alpha`. A zero predictive
    /// variance (a clamped prediction) scores CRPS as its point-mass limit `|y - mean|`.
    pub fn compute(truth: &[f64], mean: &[f64], variance: &[f64], lo: &[f64], hi: &[f64], alpha: f64) -> Result<Self> {
        let n = check_lengths("report", &[truth.len(), mean.len(), variance.len(), lo.len(), hi.len()])?;
        let mut crps = 0.0;
        for i in 0..n {
            crps += if variance[i] == 0.0 {
                (truth[i] - mean[i]).abs()
            } else {
                crps_gaussian_point(truth[i], mean[i], variance[i])?
            };
        }
        Ok(Self {
            mae: mae(truth, mean)?,
            rmse: rmse(truth, mean)?,
            crps: crps / n as f64,
            int_score: interval_score(truth, lo, hi, alpha)?,
            coverage: coverage(truth, lo, hi)?,
            n_test: n,
            timings: Timings::default(),
        })
    }

    pub const TABLE_HEADER: &'static str = "MAE,RMSE,CRPS,INT,COV,Time (min)";

    /// One row in the column order of the benchmark scoring table.
    pub fn table_row(&self) -> String {
        format!(
            "{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.mae,
            self.rmse,
            self.crps,
            self.int_score,
            self.coverage,
            self.timings.total() / 60.0
        )
    }

    /// Flat `key = value` listing.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mae = {}", self.mae);
        let _ = writeln!(s, "rmse = {}", self.rmse);
        let _ = writeln!(s, "crps = {}", self.crps);
        let _ = writeln!(s, "int = {}", self.int_score);
        let _ = writeln!(s, "cov = {}", self.coverage);
        let _ = writeln!(s, "n_test = {}", self.n_test);
        let _ = writeln!(s, "time_nn_build_s = {}", self.timings.nn_build);
        let _ = writeln!(s, "time_train_s = {}", self.timings.train);
        let _ = writeln!(s, "time_predict_s = {}", self.timings.predict);
        s
    }
}
