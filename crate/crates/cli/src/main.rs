//! Command-line front end. Exit codes: 0 on success, 2 for invalid
//! invocations (bad flags, bad config values), 1 for runtime failures.

mod commands;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::{FileConfig, Overrides, Settings};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    fn runtime(path: &Path, err: std::io::Error) -> CliError {
        CliError::Runtime(anyhow::anyhow!("{}: {err}", path.display()))
    }
}

impl From<vaelab::Error> for CliError {
    fn from(err: vaelab::Error) -> Self {
        CliError::Runtime(anyhow::Error::new(err))
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "vaelab", version, about = "Train and measure β-VAEs on MNIST")]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory with the MNIST idx files (default: $VAELAB_DATA_DIR, then data/mnist).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Directory artifacts are written to (default: out).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cached classifier and logit statistics (default: <data-dir>/classifier.ckpt).
    #[arg(long, global = true)]
    classifier_cache: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes model.ckpt, history.csv, and per-epoch sample grids.
    Train(TrainArgs),
    /// Train one model per β; writes per-β artifacts, sweep.csv, and a montage.
    Sweep(SweepArgs),
    /// Score a checkpoint: Fréchet distance and p-value summaries over generated samples.
    Metrics(MetricsArgs),
    /// Feed generated and real images through repeated encode-decode cycles.
    Repeat(RepeatArgs),
    /// Train the scoring classifier and cache it with its logit statistics.
    ClassifierTrain,
}

#[derive(Args)]
struct TrainArgs {
    /// Architecture, "fc" or "conv".
    #[arg(long)]
    arch: Option<String>,
    /// KL weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Append decoded pool latents to every training batch.
    #[arg(long)]
    augment: bool,
    /// 1-indexed training step whose batch seeds the latent pool.
    #[arg(long)]
    gen_start_step: Option<usize>,
    /// Per-step probability that a pool slot restarts from the current batch.
    #[arg(long)]
    p_sampled: Option<f64>,
    /// Number of pool slots appended to each batch.
    #[arg(long)]
    n_augmented: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Architecture, "fc" or "conv".
    #[arg(long)]
    arch: Option<String>,
    /// Comma-separated β grid.
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    /// Training runs to execute concurrently.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Trained model checkpoint to score.
    checkpoint: PathBuf,
    /// Generated samples drawn for the score.
    #[arg(long)]
    n_samples: Option<usize>,
}

#[derive(Args)]
struct RepeatArgs {
    /// Trained model checkpoint to drive the cycles.
    checkpoint: PathBuf,
    /// Population size for each of the two input sets.
    #[arg(long)]
    n_samples: Option<usize>,
    /// Encode-decode repetitions per chain.
    #[arg(long)]
    n_reps: Option<usize>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let globals = Overrides {
        data_dir: cli.data_dir,
        out_dir: cli.out_dir,
        seed: cli.seed,
        classifier_cache: cli.classifier_cache,
        ..Overrides::default()
    };
    match cli.command {
        Command::Train(args) => {
            let flags = Overrides {
                arch: args.arch,
                beta: args.beta,
                augment: args.augment.then_some(true),
                gen_start_step: args.gen_start_step,
                p_sampled: args.p_sampled,
                n_augmented: args.n_augmented,
                ..globals
            };
            let settings = Settings::resolve("train", &file, &flags)?;
            commands::cmd_train(&settings)
        }
        Command::Sweep(args) => {
            let flags = Overrides {
                arch: args.arch,
                betas: args.betas,
                jobs: args.jobs,
                ..globals
            };
            let settings = Settings::resolve("sweep", &file, &flags)?;
            commands::cmd_sweep(&settings)
        }
        Command::Metrics(args) => {
            let flags = Overrides {
                n_samples: args.n_samples,
                ..globals
            };
            let settings = Settings::resolve("metrics", &file, &flags)?;
            commands::cmd_metrics(&settings, &args.checkpoint)
        }
        Command::Repeat(args) => {
            let flags = Overrides {
                n_samples: args.n_samples,
                n_reps: args.n_reps,
                ..globals
            };
            let settings = Settings::resolve("repeat", &file, &flags)?;
            commands::cmd_repeat(&settings, &args.checkpoint)
        }
        Command::ClassifierTrain => {
            let settings = Settings::resolve("classifier-train", &file, &globals)?;
            commands::cmd_classifier_train(&settings)
        }
    }
}
