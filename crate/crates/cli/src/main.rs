use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use muygps_cli::commands;
use muygps_cli::config::MeanKind;
use muygps_cli::{CliError, RunConfig};

/// Gaussian process regression with hyperparameters trained by nearest-neighbor
/// leave-one-out cross-validation.
#[derive(Parser)]
#[command(name = "muygps", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    /// TOML configuration file; every key has a default.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long)]
    workers: Option<usize>,
    /// Number of nearest neighbors.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// Smoothness: fixed value, or the starting point when free.
    #[arg(long = "kernel.nu", allow_negative_numbers = true)]
    nu: Option<f64>,
    /// Length scale: fixed value, or the starting point when free.
    #[arg(long = "kernel.rho", allow_negative_numbers = true)]
    rho: Option<f64>,
    #[arg(long, value_enum)]
    mean: Option<MeanKind>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        if let Some(v) = self.k {
            c.neighbors.k = v;
        }
        if let Some(v) = self.batch_size {
            c.batch.size = v;
        }
        if let Some(v) = self.nu {
            c.kernel.nu = v;
        }
        if let Some(v) = self.rho {
            c.kernel.rho = v;
        }
        if let Some(v) = self.mean {
            c.mean.kind = v;
        }
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the trend and kernel hyperparameters and write a model file.
    Train(Overrides),
    /// Predict every test cell of the configured dataset.
    Predict {
        #[command(flatten)]
        overrides: Overrides,
        /// Model file; defaults to `output.model`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score a predictions file against held-out truth.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        /// Defaults to `output.predictions`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// CSV with columns lon, lat, truth in prediction order.
        #[arg(long)]
        truth: PathBuf,
        /// Timing summary; defaults to the one written next to the predictions.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Sample a Gaussian process on a grid and write it as a dataset.
    Simulate(Overrides),
    /// Sweep batch size or neighbor count over repeated runs.
    Study(Overrides),
}

fn run(cli: Cli) -> Result<String, CliError> {
    let go = |o: &Overrides, f: &(dyn Fn(&RunConfig) -> Result<String, CliError> + Sync)| {
        let config = o.resolve()?;
        let workers = config.workers;
        muygps::par::with_workers(workers, || f(&config))
    };
    match cli.command {
        Command::Train(o) => go(&o, &commands::train),
        Command::Predict { overrides, model } => go(&overrides, &|c| {
            let path = model.clone().unwrap_or_else(|| c.output.model.clone());
            commands::predict(c, &path)
        }),
        Command::Eval { overrides, predictions, truth, summary } => go(&overrides, &|c| {
            let preds = predictions.clone().unwrap_or_else(|| c.output.predictions.clone());
            commands::eval(c, &preds, &truth, summary.as_deref())
        }),
        Command::Simulate(o) => go(&o, &commands::simulate),
        Command::Study(o) => go(&o, &commands::study),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
