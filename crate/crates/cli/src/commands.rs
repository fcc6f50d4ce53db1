//! The five subcommands. Each returns a human-readable summary for stdout.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use muygps::data::{
    mask_split, read_predictions, read_truth, simulate_gp, write_dataset_csv, write_predictions, write_truth,
    CellStatus, MaskSource, TruthRow,
};
use muygps::meanmodels::MeanModel;
use muygps::metrics::{rmse, MetricsReport, Timings};
use muygps::{Error, MaternKernel};

use crate::config::{summary_for, RunConfig};
use crate::error::{CliError, Context, Result};
use crate::model::{KernelRecord, MeanRecord, ModelFile, FORMAT};
use crate::pipeline::{self, load_dataset, prepare};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(Error::from).context(&format!("creating {}", path.display()))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(Error::from).context(&format!("opening {}", path.display()))
}

fn echo(config: &RunConfig) -> String {
    format!("resolved configuration:\n{}", config.to_toml())
}

pub fn train(config: &RunConfig) -> Result<String> {
    config.validate()?;
    let prepared = prepare(config, load_dataset(config)?)?;
    log::info!("training on {} points with {} trend", prepared.train.len(), prepared.mean.name());
    let fit = pipeline::fit(config, &prepared)?;
    let p = &fit.params;
    let model = ModelFile {
        format: FORMAT.into(),
        kernel: KernelRecord {
            sigma_sq: p.sigma_sq.value,
            rho: p.rho.value,
            nu: p.nu.value,
            tau_sq: p.tau_sq.value,
            estimated: std::iter::once("sigma_sq".to_string())
                .chain(p.free_names().iter().map(|n| n.as_str().to_string()))
                .collect(),
        },
        mean: MeanRecord::from_model(&prepared.mean),
        normalization: prepared.normalization,
        training: fit.record,
        config: config.clone(),
    };
    model.save(&config.output.model)?;

    let r = &model.training;
    let mut s = String::new();
    let _ = writeln!(s, "model written to {}", config.output.model.display());
    let _ = writeln!(s, "n_train = {}, k = {}, batch = {}", r.n_train, r.k, r.batch_size);
    let _ = writeln!(
        s,
        "sigma_sq = {}, rho = {}, nu = {}, tau_sq = {}",
        model.kernel.sigma_sq, model.kernel.rho, model.kernel.nu, model.kernel.tau_sq
    );
    let _ = writeln!(
        s,
        "loss {} -> {} in {} iterations, converged = {}",
        r.loss_initial, r.loss_final, r.iterations, r.converged
    );
    let _ = writeln!(
        s,
        "seconds: nn_build {:.3}, optimize {:.3}, sigma_sq {:.3}",
        r.seconds_nn_build, r.seconds_optimize, r.seconds_sigma_sq
    );
    Ok(s)
}

/// Timing and bookkeeping of a prediction run, kept apart from the
/// predictions so those stay byte-for-byte reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub n_test: usize,
    pub clamped_variances: usize,
    pub timings: Timings,
    pub config: RunConfig,
}

pub fn predict(config: &RunConfig, model_path: &Path) -> Result<String> {
    config.validate()?;
    let model = ModelFile::load(model_path)?;
    model.check_compatible(config).context(&format!("loading {}", model_path.display()))?;
    let prepared = prepare(config, load_dataset(config)?)?;
    let kernel = model.matern().context("reading the model kernel")?;
    log::info!("predicting {} held-out cells", prepared.test_ids.len());
    let (preds, seconds) = pipeline::predict(config, &prepared, &kernel)?;

    let comments = format!(
        "model kernel: sigma_sq = {} rho = {} nu = {} tau_sq = {}\n{}",
        model.kernel.sigma_sq,
        model.kernel.rho,
        model.kernel.nu,
        model.kernel.tau_sq,
        echo(config)
    );
    let out = &config.output.predictions;
    write_predictions(create(out)?, &prepared.test_coordinates(), &preds, &comments)
        .context(&format!("writing {}", out.display()))?;

    let summary = PredictionSummary {
        n_test: preds.len(),
        clamped_variances: preds.clamped(),
        timings: Timings {
            nn_build: model.training.seconds_nn_build,
            train: model.training.seconds_optimize + model.training.seconds_sigma_sq,
            predict: seconds,
        },
        config: config.clone(),
    };
    let summary_path = config.output.summary_path();
    std::fs::write(&summary_path, toml::to_string(&summary).expect("summary serializes"))
        .map_err(Error::from)
        .context(&format!("writing {}", summary_path.display()))?;

    let mut s = format!("{} predictions written to {}\n", preds.len(), out.display());
    if let Some(truth_path) = &config.output.truth {
        if let Some(truth) = prepared.dataset.test_truth() {
            let rows: Vec<TruthRow> = prepared
                .test_coordinates()
                .into_iter()
                .zip(truth)
                .map(|((lon, lat), value)| TruthRow { lon, lat, value })
                .collect();
            write_truth(create(truth_path)?, &rows, &echo(config)).context("writing truth")?;
            let _ = writeln!(s, "held-out truth written to {}", truth_path.display());
        }
    }
    if preds.clamped() > 0 {
        let _ = writeln!(s, "{} negative variances clamped to zero", preds.clamped());
    }
    let _ = writeln!(s, "seconds: predict {seconds:.3}");
    Ok(s)
}

fn same_coordinate(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

pub fn eval(config: &RunConfig, predictions: &Path, truth: &Path, summary: Option<&Path>) -> Result<String> {
    let preds = read_predictions(open(predictions)?).context(&format!("reading {}", predictions.display()))?;
    let truth_rows = read_truth(open(truth)?).context(&format!("reading {}", truth.display()))?;
    let misaligned = |msg: String| CliError::Core { context: "evaluating".into(), source: Error::Alignment(msg) };
    if preds.mean.len() != truth_rows.len() {
        return Err(misaligned(format!("{} predictions but {} truth rows", preds.mean.len(), truth_rows.len())));
    }
    for (i, t) in truth_rows.iter().enumerate() {
        if !same_coordinate(preds.lon[i], t.lon) || !same_coordinate(preds.lat[i], t.lat) {
            return Err(misaligned(format!(
                "row {}: prediction at ({}, {}) but truth at ({}, {})",
                i + 1,
                preds.lon[i],
                preds.lat[i],
                t.lon,
                t.lat
            )));
        }
    }
    let values: Vec<f64> = truth_rows.iter().map(|t| t.value).collect();
    let alpha = 1.0 - config.predict.level;
    let mut report = MetricsReport::compute(&values, &preds.mean, &preds.variance, &preds.lo, &preds.hi, alpha)
        .context("scoring")?;
    let summary_path: PathBuf = summary.map(Path::to_path_buf).unwrap_or_else(|| summary_for(predictions));
    if let Ok(text) = std::fs::read_to_string(&summary_path) {
        let parsed: PredictionSummary = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid summary {}: {e}", summary_path.display())))?;
        report.timings = parsed.timings;
    }
    let table = format!("{}\n{}\n", MetricsReport::TABLE_HEADER, report.table_row());
    let mut text = String::new();
    for line in echo(config).lines() {
        let _ = writeln!(text, "# {line}");
    }
    text.push_str(&table);
    std::fs::write(&config.output.report, text)
        .map_err(Error::from)
        .context(&format!("writing {}", config.output.report.display()))?;
    Ok(format!("{table}{}", report.to_key_value()))
}

pub fn simulate(config: &RunConfig) -> Result<String> {
    let sim = &config.simulate;
    let kernel = MaternKernel::from_values(sim.sigma_sq, sim.rho, sim.nu, sim.tau_sq)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let trend = MeanModel::Constant { c: sim.mean };
    let full = simulate_gp(sim.rows, sim.cols, sim.spacing(), &kernel, &trend, config.seed).context("simulating")?;
    let dataset = mask_split(&full, &MaskSource::Fraction(sim.test_fraction), config.seed).context("masking")?;
    write_dataset_csv(create(&sim.output)?, &dataset, &echo(config)).context("writing the dataset")?;

    let truth_path = config.output.truth.clone().unwrap_or_else(|| {
        let mut s = sim.output.as_os_str().to_owned();
        s.push(".truth.csv");
        PathBuf::from(s)
    });
    let rows: Vec<TruthRow> = dataset
        .cells()
        .iter()
        .filter(|c| c.status == CellStatus::Test)
        .map(|c| TruthRow { lon: c.lon, lat: c.lat, value: c.response.expect("simulated cells are complete") })
        .collect();
    write_truth(create(&truth_path)?, &rows, &echo(config)).context("writing truth")?;
    let (train, test, _) = dataset.counts();
    Ok(format!(
        "{}x{} grid written to {} ({train} train, {test} test); truth in {}\n",
        sim.rows,
        sim.cols,
        sim.output.display(),
        truth_path.display()
    ))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const STUDY_HEADER: &str =
    "axis,value,reps,rmse_mean,rmse_std,rmse_q025,rmse_q975,rmse_q05,rmse_q95,seconds_mean";

/// Repeated train/predict runs over a sweep of batch sizes or neighbor counts,
/// varying the batch seed across repetitions.
pub fn study(config: &RunConfig) -> Result<String> {
    config.validate()?;
    let axis = config.study.axis.as_str();
    if axis != "batch_size" && axis != "k" {
        return Err(CliError::Config(format!("study.axis {axis:?} must be batch_size or k")));
    }
    if config.study.values.is_empty() || config.study.reps == 0 {
        return Err(CliError::Config("study needs at least one value and one repetition".into()));
    }
    let prepared = prepare(config, load_dataset(config)?)?;
    let truth = prepared.dataset.test_truth().ok_or_else(|| CliError::Core {
        context: "study".into(),
        source: Error::InsufficientData("every test cell needs a known truth".into()),
    })?;

    let mut out = String::new();
    for line in echo(config).lines() {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "{STUDY_HEADER}");
    for &value in &config.study.values {
        let mut scores = Vec::with_capacity(config.study.reps);
        let mut seconds = 0.0;
        for rep in 0..config.study.reps {
            let mut run = config.clone();
            if axis == "k" {
                run.neighbors.k = value;
            } else {
                run.batch.size = value;
            }
            run.batch.seed = Some(config.batch_seed() + rep as u64);
            log::debug!("study {axis} = {value}, repetition {rep}");
            let start = Instant::now();
            let fit = pipeline::fit(&run, &prepared)?;
            let kernel = fit.params.kernel().context("fitted kernel")?;
            let (preds, _) = pipeline::predict(&run, &prepared, &kernel)?;
            seconds += start.elapsed().as_secs_f64();
            scores.push(rmse(&truth, &preds.means()).context("scoring")?);
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let std = if scores.len() > 1 {
            (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        scores.sort_by(f64::total_cmp);
        let _ = writeln!(
            out,
            "{axis},{value},{},{mean},{std},{},{},{},{},{}",
            scores.len(),
            quantile(&scores, 0.025),
            quantile(&scores, 0.975),
            quantile(&scores, 0.05),
            quantile(&scores, 0.95),
            seconds / n
        );
    }
    std::fs::write(&config.output.study, &out)
        .map_err(Error::from)
        .context(&format!("writing {}", config.output.study.display()))?;
    Ok(out.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect())
}
