//! Run configuration: a TOML file with command-line overrides. The resolved
//! configuration is echoed into every artifact a run writes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use muygps::data::{CsvSchema, Normalization};
use muygps::kernels::{ParamName, DEFAULT_NU_BOUNDS, DEFAULT_RHO_BOUNDS};
use muygps::meanmodels::{SmootherKernel, SmootherMethod, DEFAULT_BANDWIDTH};
use muygps::neighbors::{Backend, HnswParams};
use muygps::predictor::DEFAULT_LEVEL;
use muygps::trainer::{OptimizerKind, OptimizerSettings, DEFAULT_BATCH_SIZE, DEFAULT_K};
use muygps::{HyperParams, Param};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses one per core, 1 runs sequentially.
    pub workers: usize,
    pub data: DataConfig,
    pub kernel: KernelConfig,
    pub neighbors: NeighborConfig,
    pub batch: BatchConfig,
    pub mean: MeanConfig,
    pub optimizer: OptimizerConfig,
    pub predict: PredictConfig,
    pub output: OutputConfig,
    pub simulate: SimulateConfig,
    pub study: StudyConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationConfig {
    Identity,
    #[default]
    MinMax,
    /// Offset 218, scale 464.
    Satellite,
    Custom {
        offset: f64,
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub schema: CsvSchema,
    pub normalization: NormalizationConfig,
    /// Re-split observed cells at random, holding out this fraction.
    pub test_fraction: Option<f64>,
    /// Re-split observed cells with a 0/1 grid file (1 = test).
    pub mask_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub sigma_sq: f64,
    pub rho: f64,
    /// Fixed value, or the starting point when free.
    pub nu: f64,
    pub tau_sq: f64,
    /// Parameters estimated by training: any of `rho`, `nu`, `tau_sq`.
    pub free: Vec<String>,
    pub bounds: BoundsConfig,
}

impl Default for KernelConfig {
    fn default() -> Self {
        let d = HyperParams::default();
        Self {
            sigma_sq: d.sigma_sq.value,
            rho: d.rho.value,
            nu: d.nu.value,
            tau_sq: d.tau_sq.value,
            free: vec!["nu".into()],
            bounds: BoundsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub rho: [f64; 2],
    pub nu: [f64; 2],
    pub tau_sq: [f64; 2],
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            rho: [DEFAULT_RHO_BOUNDS.0, DEFAULT_RHO_BOUNDS.1],
            nu: [DEFAULT_NU_BOUNDS.0, DEFAULT_NU_BOUNDS.1],
            tau_sq: [1e-6, 1.0],
        }
    }
}

impl KernelConfig {
    pub fn hyperparams(&self) -> Result<HyperParams> {
        let mut p = HyperParams::fixed(self.sigma_sq, self.rho, self.nu, self.tau_sq);
        for name in &self.free {
            let (param, [lo, hi]) = match name.as_str() {
                "rho" => (ParamName::Rho, self.bounds.rho),
                "nu" => (ParamName::Nu, self.bounds.nu),
                "tau_sq" => (ParamName::TauSq, self.bounds.tau_sq),
                other => {
                    return Err(CliError::Config(format!(
                        "kernel.free entry {other:?} is not one of rho, nu, tau_sq"
                    )))
                }
            };
            let v = p.get(param).value;
            *p.get_mut(param) = Param::free(v, lo, hi);
        }
        p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        for name in p.free_names() {
            let q = p.get(name);
            let (lo, hi) = q.bounds().expect("free");
            if !(lo..=hi).contains(&q.value) {
                return Err(CliError::Config(format!(
                    "initial {} = {} lies outside its bounds [{lo}, {hi}]",
                    name.as_str(),
                    q.value
                )));
            }
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Exact,
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeighborConfig {
    pub k: usize,
    pub backend: BackendKind,
    pub hnsw: HnswParams,
}

impl Default for NeighborConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K, backend: BackendKind::Exact, hnsw: HnswParams::default() }
    }
}

impl NeighborConfig {
    pub fn backend(&self) -> Backend {
        match self.backend {
            BackendKind::Exact => Backend::Exact,
            BackendKind::Approximate => Backend::Approximate(self.hnsw),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchConfig {
    pub size: usize,
    /// Batch sampling seed; defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self { size: DEFAULT_BATCH_SIZE, seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MeanKind {
    Zero,
    #[default]
    Const,
    Linear,
    Smoother,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanConfig {
    pub kind: MeanKind,
    /// Smoother bandwidth in grid cells.
    pub bandwidth: f64,
    pub kernel: SmootherKernel,
    pub method: SmootherMethod,
}

impl Default for MeanConfig {
    fn default() -> Self {
        Self {
            kind: MeanKind::Const,
            bandwidth: DEFAULT_BANDWIDTH,
            kernel: SmootherKernel::default(),
            method: SmootherMethod::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub fd_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let s = OptimizerSettings::default();
        Self { kind: OptimizerKind::default(), max_iter: s.max_iter, rel_tol: s.rel_tol, fd_step: s.fd_step }
    }
}

impl OptimizerConfig {
    pub fn settings(&self) -> OptimizerSettings {
        OptimizerSettings { max_iter: self.max_iter, rel_tol: self.rel_tol, fd_step: self.fd_step, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Nominal coverage of the reported intervals.
    pub level: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { level: DEFAULT_LEVEL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub model: PathBuf,
    pub predictions: PathBuf,
    /// Timing summary of a prediction run; defaults to `<predictions>.summary.toml`.
    pub summary: Option<PathBuf>,
    /// Held-out truth written by `predict` and `simulate` when known.
    pub truth: Option<PathBuf>,
    pub report: PathBuf,
    pub study: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            model: "model.toml".into(),
            predictions: "predictions.csv".into(),
            summary: None,
            truth: None,
            report: "report.csv".into(),
            study: "study.csv".into(),
        }
    }
}

impl OutputConfig {
    pub fn summary_path(&self) -> PathBuf {
        self.summary.clone().unwrap_or_else(|| summary_for(&self.predictions))
    }
}

/// Default summary location next to a predictions file.
pub fn summary_for(predictions: &Path) -> PathBuf {
    let mut s = predictions.as_os_str().to_owned();
    s.push(".summary.toml");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub rows: usize,
    pub cols: usize,
    /// Cell spacing; defaults to placing the longer side on `[0, 1]`.
    pub spacing: Option<f64>,
    pub sigma_sq: f64,
    pub rho: f64,
    pub nu: f64,
    pub tau_sq: f64,
    /// Constant trend added to the field.
    pub mean: f64,
    pub test_fraction: f64,
    pub output: PathBuf,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            rows: 40,
            cols: 40,
            spacing: None,
            sigma_sq: 1.0,
            rho: 0.1,
            nu: 0.8,
            tau_sq: 0.001,
            mean: 0.0,
            test_fraction: 0.3,
            output: "simulated.csv".into(),
        }
    }
}

impl SimulateConfig {
    pub fn spacing(&self) -> f64 {
        self.spacing.unwrap_or(1.0 / (self.rows.max(self.cols).max(2) - 1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// `batch_size` or `k`.
    pub axis: String,
    pub values: Vec<usize>,
    pub reps: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { axis: "batch_size".into(), values: vec![25, 100, 500, 2000], reps: 20 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn batch_seed(&self) -> u64 {
        self.batch.seed.unwrap_or(self.seed)
    }

    pub fn normalization(&self) -> Result<Option<Normalization>> {
        Ok(match self.data.normalization {
            NormalizationConfig::Identity => Some(Normalization::identity()),
            NormalizationConfig::Satellite => Some(Normalization::satellite_preset()),
            NormalizationConfig::Custom { offset, scale } => {
                Some(Normalization::new(offset, scale).map_err(|e| CliError::Config(e.to_string()))?)
            }
            NormalizationConfig::MinMax => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.hyperparams()?;
        if self.neighbors.k == 0 {
            return Err(CliError::Config("neighbors.k must be positive".into()));
        }
        if self.batch.size == 0 {
            return Err(CliError::Config("batch.size must be positive".into()));
        }
        if !(self.predict.level > 0.0 && self.predict.level < 1.0) {
            return Err(CliError::Config(format!("predict.level {} must lie in (0, 1)", self.predict.level)));
        }
        if let Some(f) = self.data.test_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(CliError::Config(format!("data.test_fraction {f} must lie in (0, 1)")));
            }
        }
        if self.data.test_fraction.is_some() && self.data.mask_file.is_some() {
            return Err(CliError::Config("set at most one of data.test_fraction and data.mask_file".into()));
        }
        if self.mean.bandwidth.is_nan() || self.mean.bandwidth <= 0.0 {
            return Err(CliError::Config("mean.bandwidth must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
        let p = c.kernel.hyperparams().unwrap();
        assert!(p.nu.is_free() && !p.rho.is_free());
    }

    #[test]
    fn parses_sections_and_rejects_unknown_keys() {
        let c = RunConfig::parse(
            "seed = 3\n[kernel]\nrho = 0.25\nfree = [\"nu\", \"rho\"]\n[mean]\nkind = \"smoother\"\n[data]\nnormalization = \"satellite\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.mean.kind, MeanKind::Smoother);
        assert!(c.kernel.hyperparams().unwrap().rho.is_free());
        assert_eq!(c.normalization().unwrap(), Some(Normalization::satellite_preset()));
        assert!(RunConfig::parse("sed = 3").is_err());
        assert!(RunConfig::parse("[kernel]\nfree = [\"sigma_sq\"]").unwrap().kernel.hyperparams().is_err());
        let custom = RunConfig::parse("[data.normalization.custom]\noffset = 1.0\nscale = 2.0\n").unwrap();
        assert_eq!(custom.normalization().unwrap(), Some(Normalization { offset: 1.0, scale: 2.0 }));
    }
}
