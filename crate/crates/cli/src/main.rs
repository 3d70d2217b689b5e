//! `faf`: dataset generation, training, evaluation, calibration and tasks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use faf_core::FafError;

const EXIT_CODES: &str = "\
Exit codes:
   0  success
   2  invalid command line
   3  configuration error
   4  malformed file
   5  sensor safety limit
   6  contract violated
   7  shape mismatch
   8  degenerate input
   9  training diverged
  10  task failed
  11  tensor error
  12  I/O error";

#[derive(Parser, Debug)]
#[command(name = "faf", version, about = "Simulated tactile force estimation", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML file with [model], [train], [push] and [grasp] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Sensor profile: built-in name or TOML path. Repeatable.
    #[arg(long = "profile", global = true)]
    pub profiles: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate, balance or summarize datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train a force model.
    Train(TrainArgs),
    /// Per-profile, per-indenter error of an estimator.
    Eval(EvalArgs),
    /// Train the four encoder/head variants and compare them.
    Ablate(AblateArgs),
    /// Few-shot adaptation to a new sensor profile.
    Calibrate(CalibrateArgs),
    /// Closed-loop tasks.
    #[command(subcommand)]
    Task(TaskCmd),
}

#[derive(Subcommand, Debug)]
pub enum DatasetCmd {
    /// Collect indentation trajectories.
    Gen(GenArgs),
    /// Level the F^z histogram per indenter.
    Balance(BalanceArgs),
    /// Histogram CSV and force ranges.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Poses per indenter and profile.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 0.05)]
    pub step_mm: f64,
    #[arg(long, default_value_t = 15.0)]
    pub f_max: f64,
    /// Restrict to these indenters. Repeatable.
    #[arg(long = "indenter")]
    pub indenters: Vec<String>,
    #[arg(long, default_value = "dataset.faf")]
    pub file: String,
}

#[derive(Args, Debug)]
pub struct BalanceArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub bin_width: f64,
    #[arg(long, default_value = "balanced.faf")]
    pub file: String,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub bin_width: f64,
    /// Force window of the bin-ratio summary, N.
    #[arg(long, default_value_t = 0.5)]
    pub lo: f64,
    #[arg(long, default_value_t = 12.0)]
    pub hi: f64,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_backbone: Option<f64>,
    #[arg(long)]
    pub lr_head: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta_w: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Keep the encoder at its initial weights.
    #[arg(long)]
    pub frozen_backbone: bool,
    /// Train without the depth-reconstruction head.
    #[arg(long)]
    pub no_decoder: bool,
    /// Use the convolutional encoder instead of the transformer.
    #[arg(long)]
    pub conv_encoder: bool,
    #[arg(long, default_value = "model.fafw")]
    pub file: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimatorKind {
    /// Recorded ground-truth labels.
    Oracle,
    /// Trained checkpoint given by --checkpoint.
    Model,
}

#[derive(Args, Debug, Clone)]
pub struct EstimatorArgs {
    #[arg(long, value_enum, default_value_t = EstimatorKind::Model)]
    pub estimator: EstimatorKind,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Training set.
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluation set.
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Rig samples used for adaptation.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Independent rig samples for the before/after error.
    #[arg(long, default_value_t = 100)]
    pub holdout: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// final-layer, regressor-head or full. Defaults by profile family.
    #[arg(long)]
    pub scope: Option<String>,
    /// Dataset of other profiles to measure forgetting on.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long, default_value = "calibrated.fafw")]
    pub file: String,
}

#[derive(Subcommand, Debug)]
pub enum TaskCmd {
    /// Estimate a mass from constant-velocity pushes.
    Weigh(WeighArgs),
    /// Squeeze a cup to a target force and measure rim deformation.
    Deform(DeformArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Patch {
    Flat,
    Curved,
}

#[derive(Args, Debug)]
pub struct WeighArgs {
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long)]
    pub mass: Option<f64>,
    /// Table friction coefficient of the simulated pushes.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Fit the friction to the force-sensor readings of the pushes instead of using --mu as known.
    #[arg(long)]
    pub fit_friction: bool,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, value_enum)]
    pub patch: Option<Patch>,
}

#[derive(Args, Debug)]
pub struct DeformArgs {
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Target grip force, N. Repeatable.
    #[arg(long = "target")]
    pub targets: Vec<f64>,
    #[arg(long)]
    pub step_mm: Option<f64>,
    #[arg(long)]
    pub spring: Option<f64>,
}

pub fn exit_code(e: &FafError) -> u8 {
    match e {
        FafError::Config(_) => 3,
        FafError::Format { .. } => 4,
        FafError::Safety(_) => 5,
        FafError::Contract(_) => 6,
        FafError::Shape { .. } => 7,
        FafError::DegenerateInput(_) => 8,
        FafError::TrainingDiverged { .. } => 9,
        FafError::TaskFailure(_) => 10,
        FafError::Tensor(_) => 11,
        FafError::Io(_) => 12,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
