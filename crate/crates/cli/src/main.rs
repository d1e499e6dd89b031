//! `uqtraj`: ingest annotations, augment, train, evaluate and forecast.
//!
//! Exit codes: 0 success, 2 input error, 3 numeric failure, 4 checkpoint
//! or configuration mismatch.

mod commands;
mod support;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "uqtraj", version, about = "Pedestrian forecasting with calibrated uncertainty")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Global {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Experiment seed; replaces the configured one.
    #[arg(long, env = "UQTRAJ_SEED", global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse annotations, window them and write the train/test split.
    Ingest(IngestArgs),
    /// Add filtered noisy histories to a split.
    Augment(AugmentArgs),
    /// Train an ensemble or an MC-dropout network.
    Train(TrainArgs),
    /// Score a trained model on filtered test sequences.
    Evaluate(EvaluateArgs),
    /// Forecast external tracks without ground-truth scoring.
    OodPredict(OodArgs),
    /// Compare analytic and finite-difference gradients on a small network.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Annotation file: frame, pedestrian id, x, y per row.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Frames between retained annotations.
    #[arg(long)]
    pub frame_stride: Option<i64>,
    /// Share of sequences held out for testing.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Expected number of windows; the summary records any discrepancy.
    #[arg(long)]
    pub expect_sequences: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    /// Raw training windows (JSON lines).
    #[arg(long)]
    pub train: PathBuf,
    /// Raw test windows (JSON lines).
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training noise fractions, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub train_fractions: Option<Vec<f64>>,
    /// Test noise fraction.
    #[arg(long)]
    pub eval_fraction: Option<f64>,
    /// Sampled histories per window.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ensemble,
    Dropout,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Augmented training pairs (JSON lines).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "ensemble")]
    pub method: Method,
    #[arg(long)]
    pub members: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Dropout probability of the MC-dropout network.
    #[arg(long)]
    pub dropout_p: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Filtered test pairs (JSON lines).
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sigma scales, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sigma_scales: Option<Vec<f64>>,
    /// Stochastic passes for an MC-dropout model.
    #[arg(long)]
    pub dropout_samples: Option<usize>,
    /// Number of test sequences dumped as plot-ready files.
    #[arg(long, default_value_t = 10)]
    pub dump: usize,
    /// Label written in the first metrics column.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct OodArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Track files with one `x y` row per step.
    #[arg(long = "track", required = true)]
    pub tracks: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dropout_samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradTarget {
    Joint,
    Nll,
    CovMse,
}

#[derive(Debug, Args, Serialize)]
pub struct GradCheckArgs {
    #[arg(long, value_enum, default_value = "joint")]
    pub objective: GradTarget,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Number of synthetic examples, or pairs taken from `--data`.
    #[arg(long, default_value_t = 3)]
    pub examples: usize,
    /// Optional augmented pairs to check on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Ingest(a) => commands::ingest(&cli.global, a),
        Command::Augment(a) => commands::augment(&cli.global, a),
        Command::Train(a) => commands::train(&cli.global, a),
        Command::Evaluate(a) => commands::evaluate(&cli.global, a),
        Command::OodPredict(a) => commands::ood_predict(&cli.global, a),
        Command::GradCheck(a) => commands::grad_check(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
