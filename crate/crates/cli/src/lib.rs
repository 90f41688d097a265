//! Config-driven pipeline around `cumolos-core`: synthesize or ingest
//! fields, train, run ensemble inference, evaluate and plot.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod render;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::Context;
pub use config::PipelineConfig;
pub use error::{CliError, CliResult};

/// Environment variable that overrides `--out` and `paths.output_dir`.
pub const OUT_ENV: &str = "CUMOLOS_OUT";

#[derive(Debug, Parser)]
#[command(name = "cumolos", version, about = "Masked-autoencoder reconstruction of time-height velocity fields")]
pub struct Cli {
    /// TOML pipeline configuration; omitted sections take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for synthesis, training and inference masks.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Base directory for run directories.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic day files (and their noise-free templates).
    Synth,
    /// Train a model and write its checkpoint and per-epoch log.
    Train {
        /// Training files; defaults to paths.train_files.
        #[arg(long = "data")]
        data: Vec<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Hold the final mask ratio from the first epoch.
        #[arg(long)]
        no_curriculum: bool,
    },
    /// Reconstruct test patches with a Monte Carlo mask ensemble.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test files; defaults to paths.test_files.
        #[arg(long = "data")]
        data: Vec<PathBuf>,
    },
    /// Score the ensemble mean and the mean-filter baseline.
    Evaluate {
        /// Directory written by `infer`.
        #[arg(long)]
        infer_dir: PathBuf,
        /// Reference fields, one per test file; defaults to the test files.
        #[arg(long)]
        truth: Vec<PathBuf>,
        /// Also score the reference against itself.
        #[arg(long)]
        oracle: bool,
    },
    /// Render spectral, field and loss-curve images.
    Plot {
        /// Directory written by `evaluate`.
        #[arg(long)]
        eval_dir: Option<PathBuf>,
        /// Training log CSVs or training run directories to overlay.
        #[arg(long)]
        loss: Vec<PathBuf>,
    },
}

/// Output of a successful invocation.
#[derive(Debug, PartialEq)]
pub enum Outcome {
    Printed(String),
    RunDir(PathBuf),
}

/// Applies overrides in order: config file, `--seed`, then output base from
/// `CUMOLOS_OUT`, `--out`, `paths.output_dir`.
pub fn resolve(cli: &Cli, env_out: Option<PathBuf>) -> CliResult<Context> {
    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.apply_seed(seed);
    }
    let out_base = env_out
        .or_else(|| cli.out.clone())
        .unwrap_or_else(|| config.paths.output_dir.clone());
    config.paths.output_dir = out_base.clone();
    Ok(Context { config, out_base })
}

pub fn run(cli: &Cli, env_out: Option<PathBuf>) -> CliResult<Outcome> {
    let ctx = resolve(cli, env_out)?;
    if cli.print_config {
        return Ok(Outcome::Printed(ctx.config.to_toml()));
    }
    let Some(command) = &cli.command else {
        return Err(CliError::config("no command given (synth, train, infer, evaluate, plot)"));
    };
    let dir = match command {
        Command::Synth => commands::synth::run(&ctx)?,
        Command::Train {
            data,
            resume,
            no_curriculum,
        } => commands::train::run(
            &ctx,
            &commands::train::TrainArgs {
                data: data.clone(),
                resume: resume.clone(),
                no_curriculum: *no_curriculum,
            },
        )?,
        Command::Infer { checkpoint, data } => commands::infer::run(
            &ctx,
            &commands::infer::InferArgs {
                checkpoint: checkpoint.clone(),
                data: data.clone(),
            },
        )?,
        Command::Evaluate {
            infer_dir,
            truth,
            oracle,
        } => commands::evaluate::run(
            &ctx,
            &commands::evaluate::EvaluateArgs {
                infer_dir: infer_dir.clone(),
                truth: truth.clone(),
                oracle: *oracle,
            },
        )?,
        Command::Plot { eval_dir, loss } => commands::plot::run(
            &ctx,
            &commands::plot::PlotArgs {
                eval_dir: eval_dir.clone(),
                loss: loss.clone(),
            },
        )?,
    };
    Ok(Outcome::RunDir(dir))
}
