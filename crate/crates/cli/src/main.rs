mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dsms_core::MixingStrategy;

/// Analysis and resynthesis of one-shot drum sounds.
#[derive(Debug, Parser)]
#[command(name = "dsms", version)]
struct Cli {
    /// Worker threads [default: DSMS_THREADS, else all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelSize {
    /// Full-width encoders and TCN on 2 s inputs.
    Full,
    /// Narrow layers on 0.512 s inputs, for quick single-core runs.
    Desk,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic drum dataset with a manifest and train/val/test splits.
    GenData(GenDataArgs),
    /// Track partials in a WAV file and write them as CSV.
    Analyze(AnalyzeArgs),
    /// Resynthesize a WAV file under a mixing strategy.
    Resynth(ResynthArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Evaluate a model on a manifest and write a metrics report.
    Eval(EvalArgs),
    /// Export transient embeddings for every item of a manifest.
    Embed(EmbedArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Length of each rendered drum.
    #[arg(long, default_value_t = 2.0)]
    pub seconds: f64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub max_tracks: usize,
}

#[derive(Debug, Args)]
pub struct ResynthArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Model checkpoint; optional for strategy `s`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// One of s, s+n, t(s), t(s+n), t(s)+n, t(s)+s+n [default: the model's].
    #[arg(long)]
    pub strategy: Option<MixingStrategy>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the noise excitation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Validation manifest; without it the manifest is split 80/10/10 by pack.
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    #[arg(long, default_value = "t(s)+n")]
    pub strategy: MixingStrategy,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelSize::Full)]
    pub size: ModelSize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 12)]
    pub batch: usize,
    /// Seeds weight init, batch order and the split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 48.0)]
    pub max_hours: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Override the model's strategy.
    #[arg(long)]
    pub strategy: Option<MixingStrategy>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn init_threads(flag: Option<usize>) -> anyhow::Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("DSMS_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| anyhow::anyhow!("DSMS_THREADS must be a positive integer, got {v:?}"))?,
            ),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        anyhow::bail!("thread count must be positive");
    }
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Resynth(a) => commands::resynth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Embed(a) => commands::embed(&a),
    }
}

/// Collapses an error chain onto one line.
fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return ExitCode::from(2);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
