//! Posterior prediction at new locations by local kriging against the `k`
//! nearest training points, plus exact dense kriging for small validation
//! problems.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kernels::{DistanceMatrix, MaternKernel};
use crate::linalg::{dot, Cholesky};
use crate::meanmodels::MeanModel;
use crate::neighbors::NeighborIndex;
use crate::par::{try_map_range, Execution};
use crate::points::{distance, Points};
use crate::trainer::TrainingSet;

pub const DEFAULT_LEVEL: f64 = 0.95;
/// Largest training set the dense routines accept by default.
pub const FULL_ORACLE_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorPrediction {
    pub mean: f64,
    pub variance: f64,
    pub lo: f64,
    pub hi: f64,
    /// The computed variance was negative and has been clamped to zero.
    pub clamped: bool,
}

impl PosteriorPrediction {
    fn new(mean: f64, raw_variance: f64, z: f64) -> Self {
        let clamped = raw_variance < 0.0;
        let variance = raw_variance.max(0.0);
        let half = z * variance.sqrt();
        Self { mean, variance, lo: mean - half, hi: mean + half, clamped }
    }

    fn shifted(self, offset: f64) -> Self {
        Self { mean: self.mean + offset, lo: self.lo + offset, hi: self.hi + offset, ..self }
    }
}

/// Two-sided standard normal quantile for a central interval at `level`.
pub fn z_multiplier(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("interval level {level} must lie in (0, 1)")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

/// Local kriging prediction on the residual scale (no trend).
pub fn predict_nn(
    train: &TrainingSet,
    index: &NeighborIndex,
    point: &[f64],
    k: usize,
    kernel: &MaternKernel,
    level: f64,
) -> Result<PosteriorPrediction> {
    train.check_index(index)?;
    let z = z_multiplier(level)?;
    let (mean, var) = local_kriging(train, index, point, k, kernel)?;
    Ok(PosteriorPrediction::new(mean, var, z))
}

fn local_kriging(
    train: &TrainingSet,
    index: &NeighborIndex,
    point: &[f64],
    k: usize,
    kernel: &MaternKernel,
) -> Result<(f64, f64)> {
    let nn = index.query(point, k)?;
    let local = train.locations().select(&nn.ids);
    let chol = Cholesky::factor(&kernel.covariance_matrix(&DistanceMatrix::pairwise(&local)))?;
    let cross: Vec<f64> = nn.distances.iter().map(|&d| kernel.eval(d)).collect();
    let y: Vec<f64> = nn.ids.iter().map(|&j| train.responses()[j]).collect();
    let mean = dot(&cross, &chol.solve(&y));
    let variance = kernel.prior_variance() - chol.quad_form(&cross);
    Ok((mean, variance))
}

/// Predictions for a set of test locations, in input order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub items: Vec<PosteriorPrediction>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of variances clamped at zero.
    pub fn clamped(&self) -> usize {
        self.items.iter().filter(|p| p.clamped).count()
    }

    pub fn means(&self) -> Vec<f64> {
        self.items.iter().map(|p| p.mean).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.items.iter().map(|p| p.variance).collect()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.items.iter().map(|p| p.lo).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.items.iter().map(|p| p.hi).collect()
    }
}

/// Local kriging at every test location with the trend `mean` restored.
#[allow(clippy::too_many_arguments)]
pub fn predict_nn_batch(
    train: &TrainingSet,
    index: &NeighborIndex,
    points: &Points,
    k: usize,
    kernel: &MaternKernel,
    mean: &MeanModel,
    level: f64,
    exec: Execution,
) -> Result<Predictions> {
    train.check_index(index)?;
    if points.dim() != train.locations().dim() {
        return Err(Error::Shape(format!(
            "test points have dimension {}, training points {}",
            points.dim(),
            train.locations().dim()
        )));
    }
    let z = z_multiplier(level)?;
    let items = try_map_range(exec, points.len(), |j| {
        let x = points.row(j);
        let (m, v) = local_kriging(train, index, x, k, kernel).map_err(|e| e.at(format!("test point {j}")))?;
        Ok(PosteriorPrediction::new(m, v, z).shifted(mean.evaluate(x)))
    })?;
    let out = Predictions { items };
    if out.clamped() > 0 {
        log::warn!("{} negative posterior variances clamped to zero", out.clamped());
    }
    Ok(out)
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        return Err(Error::OracleCap(format!(
            "dense kriging over {n} training points exceeds the cap of {cap}; use nearest-neighbor prediction"
        )));
    }
    Ok(())
}

/// Exact kriging against the full training set on the residual scale.
pub fn predict_full(
    train: &TrainingSet,
    points: &Points,
    kernel: &MaternKernel,
    level: f64,
    cap: usize,
) -> Result<Vec<PosteriorPrediction>> {
    check_cap(train.len(), cap)?;
    let z = z_multiplier(level)?;
    let x = train.locations();
    if points.dim() != x.dim() {
        return Err(Error::Shape(format!("test points have dimension {}, training points {}", points.dim(), x.dim())));
    }
    let chol = Cholesky::factor(&kernel.covariance_matrix(&DistanceMatrix::pairwise(x)))?;
    let weights = chol.solve(train.responses());
    Ok(points
        .rows()
        .map(|p| {
            let cross: Vec<f64> = x.rows().map(|q| kernel.eval(distance(p, q))).collect();
            PosteriorPrediction::new(dot(&cross, &weights), kernel.prior_variance() - chol.quad_form(&cross), z)
        })
        .collect())
}

/// Gaussian log-likelihood of the training responses,
/// `-(n/2) log(2 pi) - log|K| / 2 - Y^T K^{-1} Y / 2`.
pub fn log_likelihood(train: &TrainingSet, kernel: &MaternKernel, cap: usize) -> Result<f64> {
    check_cap(train.len(), cap)?;
    if train.is_empty() {
        return Err(Error::InsufficientData("log-likelihood of an empty training set".into()));
    }
    let chol = Cholesky::factor_strict(&kernel.covariance_matrix(&DistanceMatrix::pairwise(train.locations())))?;
    let n = train.len() as f64;
    Ok(-0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * chol.log_det() - 0.5 * chol.quad_form(train.responses()))
}
