use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::io::MatrixFormat;

#[derive(Debug, Parser)]
#[command(name = "transcal", version, about = "Calibrate classifiers under covariate shift")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic covariate-shift bundle with exact density ratios.
    GenSynth(GenSynthArgs),
    /// Estimate importance weights for the source validation split.
    Weights(WeightsArgs),
    /// Fit calibration methods and write target probabilities plus a report.
    Calibrate(CalibrateArgs),
    /// Score a probability file against labels.
    Evaluate(EvaluateArgs),
    /// Summarize importance weights: histogram, Rényi values, true-weight error.
    Diagnose(DiagnoseArgs),
    /// Run the synthetic benchmark grid.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// JSON file with `scenario`, `n_source` and `n_target`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Norm of the target mean shift.
    #[arg(long)]
    pub shift_norm: Option<f64>,
    /// Target covariance multiplier.
    #[arg(long)]
    pub variance_scale: Option<f64>,
    /// Factor applied to calibrated logits.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub n_source: Option<usize>,
    #[arg(long)]
    pub n_target: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: MatrixFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: MatrixFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    pub bundle: PathBuf,
    /// Comma-separated methods: temp, vector, matrix, cpcs, transcal,
    /// transcal-no-bias, transcal-no-variance, oracle, or `all`.
    #[arg(long, default_value = "transcal")]
    pub method: String,
    /// Estimator mode for the transcal methods.
    #[arg(long, default_value = "cv_serial")]
    pub mode: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 15)]
    pub bins: u32,
    /// Precomputed raw weights for the source validation rows.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Rényi orders reported for weight-based methods.
    #[arg(long, default_value = "1")]
    pub alphas: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub probabilities: PathBuf,
    pub labels: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub bins: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    pub bundle: PathBuf,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value = "0.5,1,2")]
    pub alphas: String,
    /// Histogram bins.
    #[arg(long, default_value_t = 15)]
    pub bins: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Number of seeds per scenario, starting at `--seed`.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub n_source: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n_target: usize,
    #[arg(long, default_value_t = 200)]
    pub resamples: usize,
    #[arg(long, default_value_t = 15)]
    pub bins: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
