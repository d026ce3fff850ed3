//! `pathogenx`: data generation, training, evaluation and the survival
//! analysis reports, all driven from key = value configs.
//!
//! Exit status is 0 on success, 1 for invalid input or configuration and 2
//! for filesystem failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pathogenx::train::Method;

#[derive(Parser)]
#[command(
    name = "pathogenx",
    version,
    about = "Image-only survival prediction with genomic feature translation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort: bag files, genomic files and manifest.csv.
    Generate(GenerateArgs),
    /// Train one model and write a checkpoint plus a loss log.
    Train(TrainArgs),
    /// Image-only evaluation of a checkpoint.
    Eval(EvalArgs),
    /// k-fold cross-validation of one method, or the alignment ablation.
    Crossval(CrossvalArgs),
    /// Kaplan-Meier curves of median-risk groups and their log-rank test.
    Km(KmArgs),
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckArgs),
    /// Correlation of image embeddings with the genomic embedding, before
    /// and after translation.
    Correlate(CorrelateArgs),
}

/// Configuration sources, applied in order: defaults, `--config`, `--set`,
/// then the dedicated flags.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// key = value file; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log; defaults to the checkpoint path with `.log.csv` appended.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from this checkpoint until `epochs` are complete.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `patient_id,risk` CSV.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub folds: usize,
    /// Run PathoGen-X once per alignment variant instead.
    #[arg(long)]
    pub ablation: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct KmArgs {
    /// `patient_id,risk` CSV, as written by `eval`.
    #[arg(long)]
    pub risks: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Args)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Crossval(a) => commands::crossval(&a),
        Command::Km(a) => commands::km(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Correlate(a) => commands::correlate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
