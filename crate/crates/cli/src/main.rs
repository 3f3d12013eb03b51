//! `lfa`: train, run and inspect the LFA-Net segmentation model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lfa_core::LfaError;

#[derive(Parser, Debug)]
#[command(name = "lfa", version, about = "Lightweight retinal vessel segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on a manifest of image/mask pairs and write a checkpoint.
    Train(TrainArgs),
    /// Segment one image or every PNG in a directory.
    Infer(InferArgs),
    /// Score a checkpoint (or saved predictions) against ground truth.
    Eval(EvalArgs),
    /// Print parameter count, FLOPs and model size.
    Inspect(InspectArgs),
    /// Verify every backward pass against central differences.
    Gradcheck(GradcheckArgs),
    /// List the ablation rows and their switches.
    AblationList,
    /// Write a seeded synthetic vessel dataset and its manifest.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `image<TAB>mask` per line; relative paths resolve against its directory.
    #[arg(long)]
    manifest: PathBuf,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Square training extent; a multiple of 8.
    #[arg(long)]
    input_size: Option<usize>,
    /// Ablation row name, e.g. `LU-NS` or `LFA-Net`.
    #[arg(long)]
    ablation: Option<String>,
    /// Training fraction of the manifest; the rest is validation.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Random rotation and contrast on every training sample.
    #[arg(long)]
    augment: bool,
    /// Also write `<out>.epochN` every N epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from a checkpoint that carries optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value = "lfa.ckpt")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A PNG file or a directory of PNGs.
    #[arg(long)]
    input: PathBuf,
    /// Mask file for a single input, directory for a directory input.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
    /// Resize to this square extent for the network; the mask is mapped back
    /// to the source extent. Defaults to the source extent.
    #[arg(long)]
    input_size: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    checkpoint: Option<PathBuf>,
    /// Directory of mask PNGs named after each manifest image.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
    #[arg(long)]
    input_size: Option<usize>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long, conflicts_with = "checkpoint")]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "checkpoint")]
    ablation: Option<String>,
    #[arg(long, default_value_t = 512)]
    input_size: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Per-layer parameters and FLOPs.
    #[arg(long)]
    layers: bool,
    /// Per-layer breakdown as CSV.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Run a single named check.
    #[arg(long)]
    op: Option<String>,
    /// Override every check's tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure carrying its exit status.
pub enum Failure {
    /// Verification or evaluation did not pass; details already printed.
    Verification(String),
    Error(LfaError),
}

impl From<LfaError> for Failure {
    fn from(e: LfaError) -> Self {
        Failure::Error(e)
    }
}

fn exit_code(e: &LfaError) -> u8 {
    match e {
        LfaError::Config(_) | LfaError::Lookup { .. } => 2,
        LfaError::Io { .. }
        | LfaError::Image { .. }
        | LfaError::BadMagic { .. }
        | LfaError::Version { .. }
        | LfaError::Checksum { .. }
        | LfaError::Truncated { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::AblationList => commands::ablation_list(),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
