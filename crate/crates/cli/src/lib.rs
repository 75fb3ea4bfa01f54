//! Command-line front end: argument parsing, subcommands and exit codes.

mod commands;
pub mod workflow;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use cso_forecast::models::ModelKind;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "csofc",
    version,
    about = "Interpretable sewer tank forecasting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `train.max_epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelSel {
    /// Model kind; defaults to the config's model block.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Model container; defaults to `<output_dir>/<kind>.model`.
    #[arg(long)]
    pub model_path: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resample the inputs and write the table with its digest.
    Ingest {
        #[command(flatten)]
        common: Common,
    },
    /// Train, save the model container, training log and report.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Evaluate a saved model on the validation windows.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sel: ModelSel,
    },
    /// Forecasts for validation windows.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sel: ModelSel,
        /// Validation window indices.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        offsets: Vec<usize>,
    },
    /// Decomposition (N-HiTS) or attention (TFT-lite) records.
    Explain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sel: ModelSel,
        /// Validation window indices.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        sample: Vec<usize>,
    },
    /// Sensor-failure scenarios against a saved model.
    Corrupt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sel: ModelSel,
        /// Cluster label or sensor name; repeat for several scenarios.
        #[arg(long = "cluster")]
        clusters: Vec<String>,
        /// Zero a stretch of time instead of a band of values.
        #[arg(long)]
        time_window: bool,
    },
    /// Random hyperparameter search.
    Hpo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<ModelKind>,
        /// Parallel trial workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// MAE, RMSE, size and latency per model kind.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "baseline,nhits,tft-lite")]
        models: Vec<ModelKind>,
        /// Retrain even when a saved model exists.
        #[arg(long)]
        retrain: bool,
    },
    /// Write a synthetic sewer dataset as a wide CSV plus a starter config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 8760)]
        hours: usize,
        /// Include the latent rain intensity column.
        #[arg(long)]
        rain: bool,
        /// Also write a config that trains on the generated file.
        #[arg(long)]
        config_out: Option<PathBuf>,
    },
}

/// A failed subcommand with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<cso_forecast::Error> for CliError {
    fn from(e: cso_forecast::Error) -> Self {
        use cso_forecast::Error as E;
        let code = match &e {
            E::Config(_) | E::UnknownCluster { .. } | E::UnknownSensor { .. } => EXIT_CONFIG,
            E::NonFinite(_) => EXIT_NUMERIC,
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
            _ => 1,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        cso_forecast::Error::from(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new(1, e.to_string())
    }
}

/// Runs one subcommand; the summary it prints goes to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    commands::dispatch(cli.command, out)
}
