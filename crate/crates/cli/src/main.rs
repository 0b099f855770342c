// `!(x >= 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Propagate Gaussian input uncertainty through a trained ReLU network.
#[derive(Debug, Parser)]
#[command(name = "ekfprop", version)]
pub struct Cli {
    /// TOML file with default values for seed, samples, sigma_mult, truncate,
    /// mode, var, no_timestamp, epochs, lr and batch.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Omit the wall-clock timestamp from reports.
    #[arg(long, global = true)]
    pub no_timestamp: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a ReLU MLP with minibatch SGD.
    Train(TrainArgs),
    /// Estimate per-layer process noise from calibration data.
    EstimateNoise(EstimateNoiseArgs),
    /// Run the EKF prediction step from input to output.
    Propagate(PropagateArgs),
    /// Monte Carlo output statistics for Gaussian inputs.
    Mc(McArgs),
    /// Perfect-model EKF std against Monte Carlo std.
    Compare(CompareArgs),
    /// Per-label RMSE baseline, optionally beside the zero-input-noise EKF std.
    Rmse(RmseArgs),
    /// Output std curves over a list of input variances.
    Sweep(SweepArgs),
    /// Write one dataset item as a CSV input vector.
    Extract(ExtractArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Perfect,
    Noisy,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long, value_name = "IDX")]
    pub dataset_images: Option<PathBuf>,
    #[arg(long, value_name = "IDX")]
    pub dataset_labels: Option<PathBuf>,
    /// Skip this many dataset items.
    #[arg(long, default_value_t = 0)]
    pub offset: usize,
    /// Use at most this many items after the offset.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// CSV file of input vectors, one per row.
    #[arg(long)]
    pub input: PathBuf,
    /// Row of the input CSV to use.
    #[arg(long, default_value_t = 0)]
    pub row: usize,
}

#[derive(Debug, Args)]
pub struct Sigma0Args {
    /// Diagonal input covariance `var·I`.
    #[arg(long, conflicts_with = "cov")]
    pub var: Option<f64>,
    /// Full input covariance as a square CSV matrix.
    #[arg(long)]
    pub cov: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Report file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Plot data file (CSV).
    #[arg(long)]
    pub plot_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Layer widths, e.g. 784,64,64,10.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Destination model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateNoiseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DatasetArgs,
    /// CSV calibration vectors instead of an IDX dataset.
    #[arg(long, conflicts_with_all = ["dataset_images", "dataset_labels"])]
    pub input: Option<PathBuf>,
    /// Destination noise file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PropagateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub sigma0: Sigma0Args,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Error bars span `sigma_mult` standard deviations.
    #[arg(long)]
    pub sigma_mult: Option<f64>,
    /// Use truncated-normal standard deviations for the error bars.
    #[arg(long)]
    pub truncate: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub sigma0: Sigma0Args,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub sigma0: Sigma0Args,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Labeled data for an RMSE column (needs --label).
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, requires = "dataset_images")]
    pub label: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct RmseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub label: usize,
    /// With --input, also report the EKF std for Σ₀ = 0 under this noise.
    #[arg(long, requires = "input")]
    pub noise: Option<PathBuf>,
    #[arg(long, requires = "noise")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub row: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[command(flatten)]
    pub input: InputArgs,
    /// Diagonal input variances, e.g. 0.0025,0.01,0.04.
    #[arg(long, value_delimiter = ',', required = true)]
    pub vars: Vec<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Labeled data for an RMSE curve (needs --label).
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, requires = "dataset_images")]
    pub label: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Dataset item to write (after --offset).
    #[arg(long)]
    pub index: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
