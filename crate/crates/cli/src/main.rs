//! `ssanet`: spectral lab, synthetic data, training, evaluation, gradient
//! checks and the variant ablation sweep.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
//! failure.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(
    name = "ssanet",
    version,
    about = "Scale-space approximation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Frequency-domain comparison of subsampling, decimation, upsampling and SSA.
    Spectrum(SpectrumArgs),
    /// Generate a synthetic vessel dataset.
    Synth(SynthArgs),
    /// Train one variant and save a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint: curve CSVs and a summary JSON.
    Eval(EvalArgs),
    /// Train and evaluate several variants under identical conditions.
    Ablate(AblateArgs),
    /// Finite-difference gradient checks of the engine and a desk network.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    #[arg(long, default_value_t = 64)]
    pub length: usize,
    #[arg(long, default_value = "0.70710678")]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, default_value = "ssa2")]
    pub variant: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Records used for training, in id order (default: two thirds).
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Disable random flips.
    #[arg(long)]
    pub no_flips: bool,
    /// Train on seeded random square crops of this side.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Architecture profile: desk or resnet34.
    #[arg(long, default_value = "desk")]
    pub profile: String,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-epoch history CSV here.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Skip this many leading records (the training split).
    #[arg(long, default_value_t = 0)]
    pub train_count: usize,
    /// Fail unless the checkpoint uses this profile (desk or resnet34).
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated variant names.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "ssa2,ssa3,dec,noms,driu,driu-noms"
    )]
    pub variants: Vec<String>,
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Comma-separated primitive names; `network` selects the desk SSA2
    /// check. Default: all.
    #[arg(long, value_delimiter = ',')]
    pub ops: Vec<String>,
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Spectrum(a) => commands::spectrum(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
