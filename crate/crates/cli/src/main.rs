//! `rationalift` command-line experiments.
//!
//! Every command resolves one run configuration (flag > config file >
//! default), writes `manifest.json` into its output directory before starting,
//! and exits with 0 on success, 2 on usage or configuration errors and 3 on
//! numeric failure.

mod grid;
mod inspect;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rationalift", version, about = "Cooperative selective rationalization experiments")]
struct Cli {
    /// Log progress (-v for epochs, -vv for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a generator/predictor pair and evaluate it.
    Train(RunArgs),
    /// Pretrain one side to induce degeneration, then train jointly.
    Skew(SkewArgs),
    /// Sweep generator and predictor learning rates.
    Grid(GridArgs),
    /// Run a representation probe on a checkpoint.
    Probe(ProbeArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Render highlighted rationales of a checkpoint.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// One encoder shared by generator and predictor.
    Fr,
    /// Separate encoders.
    Rnp,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sharing mode; sets share_depth to num_layers (fr) or 0 (rnp).
    #[arg(long, value_enum, conflicts_with = "share_depth")]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub share_depth: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr_gen: Option<f64>,
    #[arg(long)]
    pub lr_pred: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Any config key, e.g. `--set lambda1=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (default: $RATIONALIFT_OUT/<command>-...).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SkewKindArg {
    Predictor,
    Generator,
}

#[derive(Debug, Args)]
pub struct SkewArgs {
    #[arg(long, value_enum)]
    pub kind: SkewKindArg,
    /// Pretraining epochs (predictor) or accuracy threshold in (0.5, 1) (generator).
    #[arg(long)]
    pub k: f64,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Comma-separated generator learning rates.
    #[arg(long, value_delimiter = ',', required = true)]
    pub gen_rates: Vec<f64>,
    /// Comma-separated predictor learning rates.
    #[arg(long, value_delimiter = ',', required = true)]
    pub pred_rates: Vec<f64>,
    /// Comma-separated seeds; the median F1 over seeds fills each cell.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Cells run concurrently as separate processes.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProbeKind {
    /// Distance of each token's encoding to its predecessor's.
    Lemma3,
    /// Output shift from inserting one token everywhere.
    Insertion,
    /// Predictor outputs on filler-only vs gold rationales.
    Uninformative,
}

/// Checkpoint plus the data it should be evaluated on. Without `--config`
/// the data settings stored in the checkpoint are reused.
#[derive(Debug, Clone, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long, value_enum)]
    pub probe: ProbeKind,
    /// Whitespace-tokenized probe sentence (lemma3). Repeatable.
    #[arg(long = "sentence")]
    pub sentences: Vec<String>,
    /// Inserted token (insertion probe); defaults to a filler token.
    #[arg(long)]
    pub token: Option<String>,
    /// Rationale length for filler-only rationales.
    #[arg(long)]
    pub span: Option<usize>,
    /// Examples used by the data-driven probes.
    #[arg(long, default_value_t = 200)]
    pub limit: usize,
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Annotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Ansi,
    Html,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "annotation")]
    pub split: SplitArg,
    /// Also render the first N examples.
    #[arg(long)]
    pub render: Option<usize>,
    #[arg(long, value_enum, default_value = "html")]
    pub format: FormatArg,
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long, value_enum, default_value = "annotation")]
    pub split: SplitArg,
    /// Number of examples to render.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "html")]
    pub format: FormatArg,
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
}

/// Numeric failures exit with 3, everything else with 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    use rationalift::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            if matches!(e, Error::Divergence { .. } | Error::ThresholdUnreachable { .. }) {
                return 3;
            }
        }
        if cause.downcast_ref::<run::NumericFailure>().is_some() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Train(args) => run::train(&args),
        Command::Skew(args) => run::skew(&args),
        Command::Grid(args) => grid::grid(&args),
        Command::Probe(args) => inspect::probe(&args),
        Command::Eval(args) => inspect::eval(&args),
        Command::Render(args) => inspect::render(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
