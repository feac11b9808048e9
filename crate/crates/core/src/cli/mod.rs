//! Command-line driver.
//!
//! Every command writes its machine-readable output as JSON objects, one per
//! line, each tagged with a `"schema"` field such as `"aecnn.epoch/1"`.
//! Exit codes: 0 success, 1 runtime error, 2 invalid configuration or
//! arguments, 3 failed invariance audit.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::aecnn::{AlignVariant, Setting};
use crate::error::Error;

pub use commands::{
    cmd_ablate, cmd_audit, cmd_config, cmd_eval, cmd_lrf_dump, cmd_synth, cmd_train, preset, RunRecord,
};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_AUDIT: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "aecnn",
    version,
    about = "Rotation-invariant point cloud classification and part segmentation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write a checkpoint plus a run record.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Measure how much predictions change under random rotations.
    Audit(AuditArgs),
    /// Train and evaluate a grid of alignment and grouping variants.
    Ablate(AblateArgs),
    /// Print local frames and frame coordinates of a cloud.
    LrfDump(LrfDumpArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Print a preset configuration file.
    Config(ConfigArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 256 points, widths up to 512.
    Desk,
    /// 256 points, narrow widths for quick runs.
    Compact,
    /// Compact widths for per-point segmentation.
    Segmentation,
    /// 1024 points, 40 classes.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Classification,
    Segmentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnchorArg {
    Mean,
    MaxProjection,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML). Defaults to the desk preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for config.toml, checkpoint.bin and record.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// YY, YAR or ARAR.
    #[arg(long)]
    pub setting: Option<Setting>,
    /// edgeconv, aeconv1, aeconv2 or aeconv3.
    #[arg(long)]
    pub variant: Option<AlignVariant>,
    /// Number of epochs; the learning-rate schedule is compressed to match.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training set in AEDS1 format (synthetic data otherwise).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Test set in AEDS1 format.
    #[arg(long)]
    pub test_dataset: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file; its directory must hold config.toml unless --config is given.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Test set in AEDS1 format (synthetic test data otherwise).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub setting: Option<Setting>,
    /// Test-time rotations whose logits are summed per sample.
    #[arg(long, default_value_t = 1)]
    pub votes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Checkpoint file to audit; random weights from --config otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Clouds in AEDS1 format (synthetic clouds otherwise).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub rotations: usize,
    #[arg(long, default_value_t = 50)]
    pub clouds: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Base run configuration (TOML). Defaults to the compact preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value = "YAR")]
    pub setting: Setting,
    /// Restrict the variants (default: edgeconv, aeconv1, aeconv3).
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<AlignVariant>,
    /// Restrict the neighborhood sizes (default: 10, 16, 32, 48).
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct LrfDumpArgs {
    /// Cloud in .xyz format.
    pub cloud: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = AnchorArg::Mean)]
    pub anchor: AnchorArg,
    /// Dump only this many farthest-point references (all points otherwise, in file order).
    #[arg(long)]
    pub n_ref: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: DatasetKind,
    #[arg(long, default_value_t = 10)]
    pub per_class: usize,
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// AEDS1 output file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every sample as .xyz into this directory.
    #[arg(long)]
    pub xyz_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| 0),
        Command::Eval(a) => cmd_eval(&a).map(|_| 0),
        Command::Audit(a) => cmd_audit(&a).map(|passed| if passed { 0 } else { EXIT_AUDIT }),
        Command::Ablate(a) => cmd_ablate(&a).map(|_| 0),
        Command::LrfDump(a) => cmd_lrf_dump(&a).map(|_| 0),
        Command::Synth(a) => cmd_synth(&a).map(|_| 0),
        Command::Config(a) => cmd_config(&a).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
