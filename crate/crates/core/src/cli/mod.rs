//! Command-line front end. Exit codes: 0 success, 2 usage or config, 3 runtime.

mod commands;
mod manifest;
mod overrides;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub use commands::REPORT_HEADER;
pub use manifest::{RunManifest, MANIFEST_FILE};
pub use overrides::apply_overrides;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "HARDLAB_OUT";

#[derive(Debug, Parser)]
#[command(name = "hardlab", version, about = "Episode hardness, forgetting and adversarial episode selection for few-shot learners")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed; overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Training config JSON. Also supplies the dataset and episode shape to the other commands.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "hardlab-out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Meta-train a learner and evaluate the best checkpoint on test episodes.
    Train(TrainArgs),
    /// Evaluate a checkpoint on freshly sampled episodes.
    Eval(EvalArgs),
    /// Score episode hardness with a checkpoint.
    Hardness(HardnessArgs),
    /// Forgetting statistics from probe traces and probe hardness ranks.
    Forgetting(ForgettingArgs),
    /// Loss correlations between models on shared episodes.
    Transfer(TransferArgs),
    /// Combine evaluated runs into one comparison table.
    Report(ReportArgs),
    /// Write a synthetic Gaussian-cluster dataset as CSV.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Named preset used when --config is absent (desk, full).
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// baseline, at or act.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Extra candidate episodes per sampled episode.
    #[arg(long)]
    pub extras: Option<usize>,
    /// per_group or pool_topk.
    #[arg(long)]
    pub selection_mode: Option<String>,
    /// proto or ridge.
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long)]
    pub ridge_lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub episodes_per_epoch: Option<usize>,
    #[arg(long)]
    pub k_shot: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Train on a CSV dataset instead of the configured source.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Any config field as KEY=VALUE; VALUE is JSON or a bare string, nested keys use dots.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub phase: String,
    /// Defaults to the config's test_episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HardnessArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub phase: String,
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct ForgettingArgs {
    /// Probe accuracy traces written by `train`.
    #[arg(long)]
    pub traces: PathBuf,
    /// Hardness CSV over the same probe episodes.
    #[arg(long)]
    pub hardness: PathBuf,
    /// Comma-separated thresholds.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Epochs in the first/last windows; scaled from the trace length when absent.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, default_value_t = crate::forgetting::DEFAULT_GROUP_SIZE)]
    pub group_size: usize,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// NAME=PATH, or PATH to name the model after its file stem. Repeat for each model.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<String>,
    #[arg(long, default_value = "test")]
    pub phase: String,
    #[arg(long, default_value_t = 500)]
    pub episodes: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories written by `train`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parameter(_)
        | Error::Ingestion(_)
        | Error::Io { .. }
        | Error::Csv(_)
        | Error::Json(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
