//! Command line entry point.
//!
//! Exit codes: 0 success, 1 statistical failure (estimator or test could not
//! produce a result), 2 I/O failure (missing or malformed files), 3
//! configuration failure (bad flags, including parse errors).

mod commands;
mod fail;
mod io;
mod model;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::io::DataKind;

#[derive(Parser)]
#[command(
    name = "spheresar",
    version,
    about = "Spatial autoregression for sphere-valued data",
    long_about = "Fits spatial lag models to observations on a unit sphere \
                  (compositions, discretized densities, or raw unit vectors), \
                  tests for spatial dependence, predicts at new sites, builds \
                  split-conformal prediction sets, and runs seeded simulation \
                  experiments."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Fit the lag model (or the covariate-indexed variant) and report it.
    Fit(FitArgs),
    /// Run the Wald and residual-bootstrap tests for spatial dependence.
    Test(TestArgs),
    /// Predict observations at new or held-out sites.
    Predict(PredictArgs),
    /// Calibrate split-conformal prediction sets and check candidates.
    Conformal(ConformalArgs),
    /// Run seeded simulation experiments and emit a metrics CSV.
    Simulate(SimulateArgs),
}

/// Input flags shared by the data-driven commands.
#[derive(Args)]
pub struct DataArgs {
    /// Observations CSV, one site per row.
    #[arg(long)]
    pub data: PathBuf,
    /// How observation rows are represented.
    #[arg(long, value_enum)]
    pub kind: DataKind,
    /// Weight matrix as 0-based i,j,w triplets.
    #[arg(long)]
    pub weights: PathBuf,
    /// Keep file weights as-is instead of row-normalizing on load.
    #[arg(long)]
    pub no_normalize: bool,
    /// Covariates CSV with a header row; selects the covariate-indexed model.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Covariate columns to use (default: all columns).
    #[arg(long, value_delimiter = ',')]
    pub covariate_columns: Vec<String>,
    /// Covariate columns to one-hot encode (reference level: first
    /// lexicographically, dropped).
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
    /// Ridge term added to the covariate covariance diagonal.
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
}

/// Moment-estimation flags shared by fit, test, and conformal.
#[derive(Args)]
pub struct MomentArgs {
    /// Eigenvalue-mass fraction kept by the spectral truncation of the
    /// residual Gram matrix before moment estimation.
    #[arg(long, default_value_t = 0.90)]
    pub pca_fraction: f64,
    /// Disable the spectral truncation entirely.
    #[arg(long)]
    pub no_pca: bool,
    /// Use the unsquared off-diagonal second moment.
    #[arg(long)]
    pub literal_cross_moment: bool,
}

#[derive(Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub moments: MomentArgs,
    /// Write the fitted model as JSON for later prediction.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Write per-site residual norms as CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub moments: MomentArgs,
    /// Test level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Bootstrap replicates.
    #[arg(long, short = 'B', default_value_t = 500)]
    pub replicates: usize,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the test summary as CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Fitted model JSON (from `fit --model-out`); predicts at the rows
    /// given by --rows.
    #[arg(long, conflicts_with = "loo")]
    pub model: Option<PathBuf>,
    /// New-site neighbour rows as row,j,w triplets.
    #[arg(long)]
    pub rows: Option<PathBuf>,
    /// Leave-one-out mode: refit without each site and predict it from the
    /// rest. Requires --data/--kind/--weights.
    #[arg(long)]
    pub loo: bool,
    /// Observations CSV (leave-one-out mode).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Observation representation (leave-one-out mode).
    #[arg(long, value_enum)]
    pub kind: Option<DataKind>,
    /// Weight matrix triplets (leave-one-out mode).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Keep file weights as-is instead of row-normalizing on load.
    #[arg(long)]
    pub no_normalize: bool,
    /// True observations to score predictions against (same representation
    /// as the predictions).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Write predicted observations here (same format as the input kind).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-site prediction errors as CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub moments: MomentArgs,
}

#[derive(Args)]
pub struct ConformalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub moments: MomentArgs,
    /// Miscoverage level of the prediction set.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Seed for the train/calibration split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use the plain empirical quantile instead of the finite-sample
    /// adjusted one.
    #[arg(long)]
    pub literal_quantile: bool,
    /// Neighbour row(s) of the site(s) to build sets for (row,j,w triplets).
    #[arg(long)]
    pub rows: Option<PathBuf>,
    /// Candidate observations to check for membership (requires --rows with
    /// exactly one row).
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Write the calibrated set record as JSON.
    #[arg(long)]
    pub set_out: Option<PathBuf>,
    /// Write per-candidate membership as CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Repeated estimation: bias, sd, rmse per lag value.
    Table1,
    /// Held-out prediction: angle error, conformal coverage and width.
    Table2,
    /// Bootstrap and Wald rejection rates over a lag signal grid.
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Space {
    /// Sphere in 6 coordinates.
    S5,
    /// Sphere in 111 coordinates.
    S110,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Which experiment to run.
    #[arg(long, value_enum)]
    pub preset: Preset,
    /// Sphere dimension by name.
    #[arg(long, value_enum, conflicts_with = "dim")]
    pub space: Option<Space>,
    /// Sphere dimension as a raw coordinate count.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of sites.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replicates (default: the preset's).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Single lag value to run instead of the preset's grid.
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    /// Bootstrap replicates per power-test run.
    #[arg(long, short = 'B')]
    pub bootstrap_replicates: Option<usize>,
    /// Noise concentration override.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Neighbours per site override.
    #[arg(long)]
    pub k: Option<usize>,
    /// Metrics CSV path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(v) = std::env::var("SPHERESAR_THREADS") {
        if v.trim() != "1" {
            log::info!("SPHERESAR_THREADS={v} requested; replicates run sequentially in this build");
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let kind = e.kind();
            let _ = e.print();
            if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                std::process::exit(0);
            }
            std::process::exit(3);
        }
    };
    let outcome = match &cli.command {
        Command::Fit(args) => commands::fit(args),
        Command::Test(args) => commands::test(args),
        Command::Predict(args) => commands::predict(args),
        Command::Conformal(args) => commands::conformal(args),
        Command::Simulate(args) => commands::simulate(args),
    };
    if let Err(failure) = outcome {
        eprintln!("error: {failure}");
        std::process::exit(failure.exit_code());
    }
}
