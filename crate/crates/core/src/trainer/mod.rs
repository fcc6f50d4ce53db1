//! Hyperparameter estimation by batched nearest-neighbor leave-one-out
//! cross-validation.
//!
//! A batch of `b` training points is sampled once per [`optimize`] call. Each
//! batch point is predicted from its `k` nearest *other* training points (the
//! neighbor sets range over the whole training set) and the mean squared
//! residual is minimized over the free kernel parameters with `sigma_sq` held
//! at 1. The variance scale is then estimated in closed form.

pub mod optimizer;

use std::collections::HashMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{HyperParams, MaternKernel, Param};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::neighbors::NeighborIndex;
use crate::par::{map_range, try_map_range, Execution};
use crate::points::Points;

pub use optimizer::Settings as OptimizerSettings;

pub const DEFAULT_K: usize = 50;
pub const DEFAULT_BATCH_SIZE: usize = 500;

/// Training locations and their (detrended) responses.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    locations: Points,
    responses: Vec<f64>,
}

impl TrainingSet {
    pub fn new(locations: Points, responses: Vec<f64>) -> Result<Self> {
        if locations.len() != responses.len() {
            return Err(Error::Shape(format!(
                "{} training locations but {} responses",
                locations.len(),
                responses.len()
            )));
        }
        if let Some(i) = responses.iter().position(|y| !y.is_finite()) {
            return Err(Error::ParameterDomain(format!("training response {i} is not finite")));
        }
        Ok(Self { locations, responses })
    }

    pub fn locations(&self) -> &Points {
        &self.locations
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub(crate) fn check_index(&self, index: &NeighborIndex) -> Result<()> {
        if index.points() != &self.locations {
            return Err(Error::Alignment("neighbor index was not built over these training locations".into()));
        }
        Ok(())
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k + 1 > self.len() {
            return Err(Error::InsufficientData(format!(
                "k = {k} needs at least k + 1 training points, have {}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// How the training batch is drawn: `size` distinct indices sampled uniformly
/// without replacement with a seeded generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub size: usize,
    pub seed: u64,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self { size: DEFAULT_BATCH_SIZE, seed: 0 }
    }
}

impl BatchSpec {
    /// Sorted batch indices. A batch at least as large as `n` is the whole set.
    pub fn sample(&self, n: usize) -> Result<Vec<usize>> {
        if self.size == 0 {
            return Err(Error::Parameter("batch size must be positive".into()));
        }
        if self.size >= n {
            return Ok((0..n).collect());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut ids = rand::seq::index::sample(&mut rng, n, self.size).into_vec();
        ids.sort_unstable();
        Ok(ids)
    }
}

/// Leave-one-out prediction of training point `i` from its `k` nearest other
/// training points.
pub fn loo_predict_nn(
    train: &TrainingSet,
    index: &NeighborIndex,
    i: usize,
    k: usize,
    params: &HyperParams,
) -> Result<f64> {
    train.check_index(index)?;
    train.check_k(k)?;
    let kernel = params.kernel()?;
    let nn = index.query_loo(i, k)?;
    let local = train.locations.select(&nn.ids);
    let cov = kernel.local_covariance(&local)?;
    let chol = Cholesky::factor(&cov).map_err(|e| e.at(format!("training point {i}")))?;
    let y: Vec<f64> = nn.ids.iter().map(|&j| train.responses[j]).collect();
    let cross = kernel.cross_covariance(train.locations.row(i), &local)?;
    Ok(dot(&cross, &chol.solve(&y)))
}

struct LocalProblem {
    id: usize,
    target: f64,
    responses: Vec<f64>,
    /// Distance-table slots for the cross covariances.
    cross: Vec<u32>,
    /// Distance-table slots for the packed lower triangle of the local
    /// covariance, row by row.
    lower: Vec<u32>,
}

/// The batched leave-one-out objective with neighbor sets and distances
/// resolved once.
///
/// Every distinct distance occurring in any neighborhood is stored once, so an
/// evaluation applies the kernel to that table and then only assembles and
/// solves the `b` local systems. On gridded data the table is tiny.
pub struct BatchObjective {
    k: usize,
    exec: Execution,
    distances: Vec<f64>,
    problems: Vec<LocalProblem>,
}

impl BatchObjective {
    pub fn new(train: &TrainingSet, index: &NeighborIndex, batch: &[usize], k: usize, exec: Execution) -> Result<Self> {
        train.check_index(index)?;
        train.check_k(k)?;
        if batch.is_empty() {
            return Err(Error::Parameter("batch is empty".into()));
        }
        let mut seen = vec![false; train.len()];
        for &i in batch {
            if i >= train.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Parameter(format!("batch index {i} is out of range or repeated")));
            }
        }
        let neighborhoods = try_map_range(exec, batch.len(), |j| index.query_loo(batch[j], k))?;

        let mut slots: HashMap<u64, u32> = HashMap::new();
        let mut distances = Vec::new();
        let mut slot = |d: f64| {
            *slots.entry(d.to_bits()).or_insert_with(|| {
                distances.push(d);
                (distances.len() - 1) as u32
            })
        };
        let mut problems = Vec::with_capacity(batch.len());
        for (&id, nn) in batch.iter().zip(&neighborhoods) {
            let local = train.locations.select(&nn.ids);
            let center = train.locations.row(id);
            let cross = local.rows().map(|x| slot(crate::points::distance(center, x))).collect();
            let mut lower = Vec::with_capacity(k * (k + 1) / 2);
            for a in 0..k {
                for b in 0..=a {
                    lower.push(slot(if a == b { 0.0 } else { crate::points::distance(local.row(a), local.row(b)) }));
                }
            }
            problems.push(LocalProblem {
                id,
                target: train.responses[id],
                responses: nn.ids.iter().map(|&j| train.responses[j]).collect(),
                cross,
                lower,
            });
        }
        Ok(Self { k, exec, distances, problems })
    }

    pub fn batch_size(&self) -> usize {
        self.problems.len()
    }

    pub fn batch(&self) -> Vec<usize> {
        self.problems.iter().map(|p| p.id).collect()
    }

    /// Number of distinct distances across all neighborhoods.
    pub fn distinct_distances(&self) -> usize {
        self.distances.len()
    }

    fn kernel_table(&self, kernel: &MaternKernel) -> Vec<f64> {
        if self.distances.len() < 4096 {
            self.distances.iter().map(|&d| kernel.eval(d)).collect()
        } else {
            map_range(self.exec, self.distances.len(), |i| kernel.eval(self.distances[i]))
        }
    }

    fn factor(&self, p: &LocalProblem, table: &[f64]) -> Result<Cholesky> {
        let k = self.k;
        let mut cov = Matrix::zeros(k, k);
        let mut slots = p.lower.iter();
        for a in 0..k {
            for b in 0..=a {
                let v = table[*slots.next().expect("packed lower triangle") as usize];
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        Cholesky::factor(&cov).map_err(|e| e.at(format!("batch element {}", p.id)))
    }

    /// Leave-one-out predictions of the batch points, in batch order.
    pub fn predictions(&self, kernel: &MaternKernel) -> Result<Vec<f64>> {
        let table = self.kernel_table(kernel);
        try_map_range(self.exec, self.problems.len(), |j| {
            let p = &self.problems[j];
            let w = self.factor(p, &table)?.solve(&p.responses);
            Ok(p.cross.iter().zip(&w).map(|(&s, wi)| table[s as usize] * wi).sum())
        })
    }

    /// Mean squared leave-one-out residual over the batch.
    pub fn loss(&self, kernel: &MaternKernel) -> Result<f64> {
        let preds = self.predictions(kernel)?;
        let sse: f64 = preds.iter().zip(&self.problems).map(|(yhat, p)| (p.target - yhat).powi(2)).sum();
        Ok(sse / self.problems.len() as f64)
    }

    /// `(1 / (k b)) sum_i Y_N^T Omega^{-1} Y_N` with the unit-scale kernel.
    pub fn sigma_sq(&self, kernel: &MaternKernel) -> Result<f64> {
        let unit = kernel.with_sigma_sq(1.0);
        let table = self.kernel_table(&unit);
        let quads =
            try_map_range(self.exec, self.problems.len(), |j| Ok(self.factor(&self.problems[j], &table)?.quad_form(&self.problems[j].responses)))?;
        Ok(quads.iter().sum::<f64>() / (self.k * self.problems.len()) as f64)
    }
}

/// `Q_B`: mean squared leave-one-out residual over the given batch.
pub fn batched_loss(
    train: &TrainingSet,
    index: &NeighborIndex,
    batch: &[usize],
    k: usize,
    params: &HyperParams,
    exec: Execution,
) -> Result<f64> {
    BatchObjective::new(train, index, batch, k, exec)?.loss(&params.kernel()?)
}

/// Closed-form variance scale from the post-optimization parameters; their
/// `sigma_sq` is ignored.
pub fn estimate_sigma_sq(
    train: &TrainingSet,
    index: &NeighborIndex,
    batch: &[usize],
    k: usize,
    params: &HyperParams,
    exec: Execution,
) -> Result<f64> {
    let unit = HyperParams { sigma_sq: Param::fixed(1.0), ..*params };
    let s = BatchObjective::new(train, index, batch, k, exec)?.sigma_sq(&unit.kernel()?)?;
    check_sigma_sq(s)
}

fn check_sigma_sq(s: f64) -> Result<f64> {
    if !s.is_finite() || s <= 0.0 {
        return Err(Error::DegenerateDesign(format!(
            "variance scale estimate is {s}; neighborhood responses carry no variation"
        )));
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Projected L-BFGS with finite-difference gradients.
    #[default]
    Lbfgs,
    /// Derivative-free search; requires exactly one free parameter.
    GoldenSection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub k: usize,
    pub batch: BatchSpec,
    pub optimizer: OptimizerKind,
    pub settings: OptimizerSettings,
    pub exec: Execution,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            batch: BatchSpec::default(),
            optimizer: OptimizerKind::default(),
            settings: OptimizerSettings::default(),
            exec: Execution::default(),
        }
    }
}

/// Wall-clock seconds spent in each training phase.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTimings {
    pub setup: f64,
    pub optimize: f64,
    pub sigma_sq: f64,
}

impl TrainTimings {
    pub fn total(&self) -> f64 {
        self.setup + self.optimize + self.sigma_sq
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    /// Fitted parameters, `sigma_sq` set to the estimate.
    pub params: HyperParams,
    pub batch: Vec<usize>,
    /// Objective after each accepted optimizer step, starting at the initial value.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub timings: TrainTimings,
}

impl TrainResult {
    pub fn kernel(&self) -> Result<MaternKernel> {
        self.params.kernel()
    }

    pub fn initial_loss(&self) -> f64 {
        self.trace[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial value")
    }
}

/// Minimize the batched leave-one-out loss over the free parameters of `init`,
/// then estimate `sigma_sq`.
pub fn optimize(
    train: &TrainingSet,
    index: &NeighborIndex,
    options: &TrainOptions,
    init: &HyperParams,
) -> Result<TrainResult> {
    init.validate()?;
    let free = init.free_names();
    if free.is_empty() {
        return Err(Error::Parameter("optimization needs at least one free parameter".into()));
    }
    if options.optimizer == OptimizerKind::GoldenSection && free.len() != 1 {
        return Err(Error::Parameter(format!(
            "golden-section search handles one free parameter, got {}",
            free.len()
        )));
    }
    let start = Instant::now();
    train.check_k(options.k)?;
    let batch = options.batch.sample(train.len())?;
    let objective = BatchObjective::new(train, index, &batch, options.k, options.exec)?;
    log::debug!(
        "batch of {} points, {} distinct neighborhood distances",
        objective.batch_size(),
        objective.distinct_distances()
    );
    let setup = start.elapsed().as_secs_f64();

    let unit = HyperParams { sigma_sq: Param::fixed(1.0), ..*init };
    let at = |x: &[f64]| -> HyperParams {
        let mut p = unit;
        for (name, v) in free.iter().zip(x) {
            p.get_mut(*name).value = *v;
        }
        p
    };
    let loss = |x: &[f64]| -> Result<f64> {
        let p = at(x);
        objective.loss(&MaternKernel::from_values(1.0, p.rho.value, p.nu.value, p.tau_sq.value)?)
    };
    let x0: Vec<f64> = free.iter().map(|n| init.get(*n).value).collect();
    let bounds: Vec<(f64, f64)> = free.iter().map(|n| init.get(*n).bounds().expect("free")).collect();

    let start = Instant::now();
    let outcome = match options.optimizer {
        OptimizerKind::Lbfgs => optimizer::lbfgsb(loss, &x0, &bounds, &options.settings)?,
        OptimizerKind::GoldenSection => {
            optimizer::golden_section(loss, x0[0], bounds[0].0, bounds[0].1, &options.settings)?
        }
    };
    let optimize_secs = start.elapsed().as_secs_f64();
    log::info!(
        "optimizer {:?}: loss {:.6e} -> {:.6e} in {} iterations ({} evaluations), converged = {}",
        options.optimizer,
        outcome.trace[0],
        outcome.f,
        outcome.iterations,
        outcome.evaluations,
        outcome.converged
    );

    let start = Instant::now();
    let fitted = at(&outcome.x);
    let sigma_sq = check_sigma_sq(objective.sigma_sq(&fitted.kernel()?)?)?;
    let params = HyperParams { sigma_sq: Param::fixed(sigma_sq), ..fitted };
    let timings = TrainTimings { setup, optimize: optimize_secs, sigma_sq: start.elapsed().as_secs_f64() };

    Ok(TrainResult {
        params,
        batch,
        trace: outcome.trace,
        iterations: outcome.iterations,
        evaluations: outcome.evaluations,
        converged: outcome.converged,
        timings,
    })
}
