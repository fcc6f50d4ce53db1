//! The persisted model: a TOML document with the fitted kernel, the trend, the
//! coordinate normalization, training diagnostics and the configuration echo.

use std::path::Path;

use serde::{Deserialize, Serialize};

use muygps::data::Normalization;
use muygps::meanmodels::{MeanModel, SmootherKernel};
use muygps::{HyperParams, MaternKernel};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const FORMAT: &str = "muygps-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelRecord {
    /// Estimated variance scale.
    pub sigma_sq: f64,
    pub rho: f64,
    pub nu: f64,
    pub tau_sq: f64,
    /// Parameters that were estimated rather than fixed.
    pub estimated: Vec<String>,
}

/// Trend coefficients. A smoother is stored by its settings and refitted from
/// the training data, which the predictor needs anyway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanRecord {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<[f64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoother_kernel: Option<SmootherKernel>,
}

impl MeanRecord {
    pub fn from_model(m: &MeanModel) -> Self {
        let mut r = MeanRecord { kind: m.name().into(), c: None, beta: None, bandwidth: None, smoother_kernel: None };
        match m {
            MeanModel::Zero => {}
            MeanModel::Constant { c } => r.c = Some(*c),
            MeanModel::Linear { beta } => r.beta = Some(*beta),
            MeanModel::Smoother(s) => {
                r.bandwidth = Some(s.bandwidth);
                r.smoother_kernel = Some(s.kernel);
            }
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingRecord {
    pub n_train: usize,
    pub k: usize,
    pub batch_size: usize,
    pub batch_seed: u64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub loss_initial: f64,
    pub loss_final: f64,
    pub trace: Vec<f64>,
    pub seconds_nn_build: f64,
    pub seconds_optimize: f64,
    pub seconds_sigma_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub kernel: KernelRecord,
    pub mean: MeanRecord,
    pub normalization: Normalization,
    pub training: TrainingRecord,
    pub config: RunConfig,
}

impl ModelFile {
    pub fn hyperparams(&self) -> HyperParams {
        HyperParams::fixed(self.kernel.sigma_sq, self.kernel.rho, self.kernel.nu, self.kernel.tau_sq)
    }

    pub fn matern(&self) -> muygps::Result<MaternKernel> {
        MaternKernel::from_values(self.kernel.sigma_sq, self.kernel.rho, self.kernel.nu, self.kernel.tau_sq)
    }

    pub fn to_toml(&self) -> String {
        format!("# MuyGPs model\n{}", toml::to_string(self).expect("model serializes"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())
            .map_err(|e| CliError::Config(format!("cannot write model {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read model {}: {e}", path.display())))?;
        let m: ModelFile = toml::from_str(&text).map_err(|e| CliError::Config(format!("invalid model file: {e}")))?;
        if m.format != FORMAT {
            return Err(CliError::Config(format!("unsupported model format {:?}", m.format)));
        }
        Ok(m)
    }

    /// Prediction must use the training data, split, trend and kernel family
    /// the model was fitted with.
    pub fn check_compatible(&self, config: &RunConfig) -> muygps::Result<()> {
        let trained = &self.config;
        let mismatch = |what: &str| {
            Err(muygps::Error::Compatibility(format!("{what} differs between the model and the current configuration")))
        };
        if trained.data != config.data || trained.seed != config.seed {
            return mismatch("the training data or its split");
        }
        if trained.mean != config.mean {
            return mismatch("the mean model");
        }
        if trained.kernel != config.kernel {
            return mismatch("the kernel specification");
        }
        Ok(())
    }
}
