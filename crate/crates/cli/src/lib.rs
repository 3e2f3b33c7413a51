//! Command-line front end: configuration, CSV ingestion, fit artifacts and
//! the `simulate`, `fit`, `predict`, `cv` and `report` commands.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use stfusion::models::ModelFamily;

use crate::config::{Overrides, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "stfusion",
    version,
    about = "Bayesian fusion of station and gridded measurements"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Random seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw synthetic replicates and optionally fit and score them.
    Simulate,
    /// Fit a model to station (and grid) CSV files.
    Fit {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Predict from a fit artifact.
    Predict {
        /// `fit.json` written by `fit` or `cv`.
        #[arg(long)]
        fit: PathBuf,
        /// CSV of `target_id, x, y, t` plus the design covariates.
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Also write the bias-corrected grid (fusion fits only).
        #[arg(long)]
        calibrate: bool,
    },
    /// Leave-group-out cross-validation.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        /// Reuse a fit artifact instead of fitting.
        #[arg(long, conflicts_with_all = ["stations", "grid", "family"])]
        fit: Option<PathBuf>,
    },
    /// Split a score table into per-figure CSVs and a summary.
    Report {
        /// Directory holding `scores.csv`.
        dir: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
pub struct DataArgs {
    #[arg(long)]
    pub stations: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// `fusion`, `stations_only` or `regression_calibration`.
    #[arg(long)]
    pub family: Option<ModelFamily>,
}

impl Cli {
    fn load_config(&self, data: Option<&DataArgs>) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            out: self.out.clone(),
            threads: self.threads,
            stations: data.and_then(|d| d.stations.clone()),
            grid: data.and_then(|d| d.grid.clone()),
        });
        if let Some(f) = data.and_then(|d| d.family) {
            cfg.model.family = f;
        }
        Ok(cfg)
    }
}

fn dispatch(cli: &Cli, cfg: RunConfig) -> CliResult<()> {
    match &cli.command {
        Command::Simulate => commands::simulate::run(&cfg),
        Command::Fit { .. } => commands::fit::run(&cfg),
        Command::Predict {
            fit,
            targets,
            calibrate,
        } => commands::predict::run(&commands::predict::PredictArgs {
            fit: fit.clone(),
            targets: targets.clone(),
            calibrate: *calibrate,
            out: cfg.out_dir(),
        }),
        Command::Cv { fit, .. } => commands::cv::run(&cfg, fit.clone()),
        Command::Report { dir } => commands::report::run(dir, cli.out.clone()),
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    let data = match &cli.command {
        Command::Fit { data } | Command::Cv { data, .. } => Some(data),
        _ => None,
    };
    let cfg = match cli.command {
        // `report` only reads a score table.
        Command::Report { .. } => RunConfig::default(),
        _ => cli.load_config(data)?,
    };
    match cfg.threads {
        Some(0) => Err(CliError::validation("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::validation(format!("cannot start thread pool: {e}")))?
            .install(|| dispatch(cli, cfg.clone())),
        None => dispatch(cli, cfg),
    }
}
