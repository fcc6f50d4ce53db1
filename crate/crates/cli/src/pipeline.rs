//! Shared steps of the subcommands: load and split data, detrend, train and
//! predict.

use std::time::Instant;

use muygps::data::{load_csv, mask_split, read_mask, CellStatus, GridDataset, MaskSource, Normalization};
use muygps::meanmodels::{fit_constant, fit_linear, fit_smoother, MeanModel};
use muygps::neighbors::NeighborIndex;
use muygps::predictor::{predict_nn_batch, Predictions};
use muygps::trainer::{estimate_sigma_sq, optimize, BatchSpec, TrainOptions, TrainingSet};
use muygps::{Execution, HyperParams, MaternKernel, Param, Points};

use crate::config::{MeanKind, RunConfig};
use crate::error::{CliError, Context, Result};
use crate::model::TrainingRecord;

pub fn execution(config: &RunConfig) -> Execution {
    if config.workers == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

/// Load the configured dataset and apply the configured re-split, if any.
pub fn load_dataset(config: &RunConfig) -> Result<GridDataset> {
    let path = config.data.path.as_ref().ok_or_else(|| CliError::Config("data.path is not set".into()))?;
    let dataset = load_csv(path, &config.data.schema).context(&format!("loading {}", path.display()))?;
    let source = match (&config.data.test_fraction, &config.data.mask_file) {
        (Some(f), _) => Some(MaskSource::Fraction(*f)),
        (None, Some(mask)) => Some(MaskSource::Cells(
            read_mask(mask, dataset.rows(), dataset.cols()).context(&format!("reading mask {}", mask.display()))?,
        )),
        (None, None) => None,
    };
    match source {
        Some(s) => mask_split(&dataset, &s, config.seed).context("splitting the dataset"),
        None => Ok(dataset),
    }
}

/// Everything derived from the data before the kernel is involved.
pub struct Prepared {
    pub dataset: GridDataset,
    pub normalization: Normalization,
    pub test_ids: Vec<usize>,
    pub test_points: Points,
    pub mean: MeanModel,
    pub train: TrainingSet,
    pub index: NeighborIndex,
    pub seconds_nn_build: f64,
}

impl Prepared {
    /// Original `(lon, lat)` of the test cells, in output order.
    pub fn test_coordinates(&self) -> Vec<(f64, f64)> {
        self.test_ids.iter().map(|&i| (self.dataset.cells()[i].lon, self.dataset.cells()[i].lat)).collect()
    }
}

pub fn fit_mean(config: &RunConfig, dataset: &GridDataset, norm: &Normalization, x: &Points, y: &[f64]) -> Result<MeanModel> {
    let m = match config.mean.kind {
        MeanKind::Zero => Ok(MeanModel::Zero),
        MeanKind::Const => fit_constant(y),
        MeanKind::Linear => fit_linear(x, y),
        MeanKind::Smoother => {
            let grid = dataset.grid_spec(norm).context("building the smoother grid")?;
            fit_smoother(grid, &dataset.training_values(), config.mean.bandwidth, config.mean.kernel, config.mean.method)
        }
    };
    m.context("fitting the mean model")
}

pub fn prepare(config: &RunConfig, dataset: GridDataset) -> Result<Prepared> {
    let normalization = match config.normalization()? {
        Some(n) => n,
        None => Normalization::min_max(&dataset),
    };
    let train_ids = dataset.ids(CellStatus::Train);
    let test_ids = dataset.ids(CellStatus::Test);
    let x = dataset.locations(&train_ids, &normalization).context("normalizing training locations")?;
    let y = dataset.responses(&train_ids).context("reading training responses")?;
    let mean = fit_mean(config, &dataset, &normalization, &x, &y)?;
    let residuals = mean.detrend(&x, &y).context("detrending")?;
    let test_points = dataset.locations(&test_ids, &normalization).context("normalizing test locations")?;
    let start = Instant::now();
    let index = NeighborIndex::build(x.clone(), config.neighbors.backend()).context("building the neighbor index")?;
    let seconds_nn_build = start.elapsed().as_secs_f64();
    let train = TrainingSet::new(x, residuals).context("assembling the training set")?;
    Ok(Prepared { dataset, normalization, test_ids, test_points, mean, train, index, seconds_nn_build })
}

pub struct Fit {
    pub params: HyperParams,
    pub record: TrainingRecord,
}

/// Estimate the free parameters (if any) and the variance scale.
pub fn fit(config: &RunConfig, prepared: &Prepared) -> Result<Fit> {
    let init = config.kernel.hyperparams()?;
    let k = config.neighbors.k;
    if k + 1 > prepared.train.len() {
        return Err(CliError::Core {
            context: "training".into(),
            source: muygps::Error::Parameter(format!(
                "neighbors.k = {k} needs at least {} training points, have {}",
                k + 1,
                prepared.train.len()
            )),
        });
    }
    let batch = BatchSpec { size: config.batch.size, seed: config.batch_seed() };
    let exec = execution(config);
    let options = TrainOptions {
        k,
        batch,
        optimizer: config.optimizer.kind,
        settings: config.optimizer.settings(),
        exec,
    };
    let mut record = TrainingRecord {
        n_train: prepared.train.len(),
        k,
        batch_size: batch.size.min(prepared.train.len()),
        batch_seed: batch.seed,
        iterations: 0,
        evaluations: 0,
        converged: true,
        loss_initial: f64::NAN,
        loss_final: f64::NAN,
        trace: Vec::new(),
        seconds_nn_build: prepared.seconds_nn_build,
        seconds_optimize: 0.0,
        seconds_sigma_sq: 0.0,
    };
    if init.free_names().is_empty() {
        let start = Instant::now();
        let ids = batch.sample(prepared.train.len()).context("sampling the batch")?;
        let s = estimate_sigma_sq(&prepared.train, &prepared.index, &ids, k, &init, exec).context("estimating sigma_sq")?;
        record.seconds_sigma_sq = start.elapsed().as_secs_f64();
        return Ok(Fit { params: HyperParams { sigma_sq: Param::fixed(s), ..init }, record });
    }
    let res = optimize(&prepared.train, &prepared.index, &options, &init).context("training")?;
    record.iterations = res.iterations;
    record.evaluations = res.evaluations;
    record.converged = res.converged;
    record.loss_initial = res.initial_loss();
    record.loss_final = res.final_loss();
    record.trace = res.trace.clone();
    record.seconds_optimize = res.timings.setup + res.timings.optimize;
    record.seconds_sigma_sq = res.timings.sigma_sq;
    Ok(Fit { params: res.params, record })
}

pub fn predict(config: &RunConfig, prepared: &Prepared, kernel: &MaternKernel) -> Result<(Predictions, f64)> {
    let start = Instant::now();
    let p = predict_nn_batch(
        &prepared.train,
        &prepared.index,
        &prepared.test_points,
        config.neighbors.k,
        kernel,
        &prepared.mean,
        config.predict.level,
        execution(config),
    )
    .context("predicting")?;
    Ok((p, start.elapsed().as_secs_f64()))
}
