//! `scaleood` command-line interface.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure
//! during training, 4 verification failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "scaleood", version, about = "Hierarchical vision-language OOD detection on precomputed embeddings")]
struct Cli {
    /// JSON run configuration; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for synthesis, training or gradient checks.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic embedding bundle.
    Synth(SynthArgs),
    /// Load and check a bundle, then print a summary.
    Validate(ValidateArgs),
    /// Train adapter and text biases on the labeled items of a bundle.
    Train(TrainArgs),
    /// Score a test bundle and write report.json and scores.jsonl.
    Eval(EvalArgs),
    /// Write the per-item score dump only.
    Score(ScoreArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON generator spec; the built-in benchmark spec when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Write `train/` and `test/` bundles with this many training items per class.
    #[arg(long)]
    pub train_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub bundle: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Output directory for checkpoint.bin, train_log.jsonl and config.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from this checkpoint; its stored training config governs the run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop once this many epochs have completed.
    #[arg(long)]
    pub stop_after: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda_ood: Option<f64>,
    #[arg(long)]
    pub renormalize_aggregates: bool,
    #[arg(long)]
    pub disable_ood_loss: bool,
    #[arg(long)]
    pub disable_entropy_gain_selection: bool,
    #[arg(long)]
    pub disable_cross_scale_fusion: bool,
    #[arg(long)]
    pub disable_lower_scale_propagation: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Output directory for report.json and scores.jsonl.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// JSON-lines output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Number of consecutive seeds, starting at `--seed` (default 0).
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Perturb one analytic gradient coordinate before comparing.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// Failure categories that map onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Numerical(anyhow::Error),
    Verification(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e = e.into();
        let numerical = e
            .chain()
            .any(|c| matches!(c.downcast_ref::<scaleood::Error>(), Some(scaleood::Error::NonFinite { .. })));
        if numerical {
            Failure::Numerical(e)
        } else {
            Failure::Usage(e)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let ctx = commands::Context {
        config: cli.config,
        seed: cli.seed,
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Validate(a) => commands::validate(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Score(a) => commands::score(&ctx, a),
        Command::Gradcheck(a) => commands::gradcheck(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(3)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(4)
        }
    }
}
