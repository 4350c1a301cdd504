//! `shellseg`: batch driver for the shell segmentation pipeline.
//!
//! Stages communicate through files in the configured output directory,
//! so each can be re-run or inspected on its own: `phantom` writes the
//! synthetic scan, `prepare` the boundary distance field, `train` the
//! predictor checkpoint, `segment` the mask and its intermediates,
//! `eval` the score and `diag` the convergence plots.
//!
//! Exit codes: 0 on success, 2 for configuration problems, 3 for
//! runtime failures.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::PipelineConfig;

/// A failed run, split by exit code: bad configuration (2) versus a
/// failure while running the pipeline (3).
#[derive(Debug)]
pub(crate) enum Failure {
    Config(String),
    Runtime(String),
}

pub(crate) type CmdResult = Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(
    name = "shellseg",
    about = "Volumetric segmentation by iteratively projected boundary shells",
    version
)]
struct Cli {
    /// JSON pipeline configuration; defaults apply to missing sections.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Cap the worker thread count. Outputs do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Override every stage seed in the config with one value.
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,

    /// Print the merged configuration as JSON and exit.
    #[arg(long, global = true)]
    print_effective_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the configured phantom volume and ground-truth mask.
    Phantom,
    /// Build the truncated signed distance field for the stored mask.
    Prepare,
    /// Train the learned predictor on the configured phantom suite.
    Train,
    /// Segment the stored volume with the configured predictor.
    Segment,
    /// Score a predicted mask against a reference mask.
    Eval {
        /// Predicted mask (raw + JSON sidecar).
        #[arg(long, value_name = "PATH")]
        pred: PathBuf,
        /// Reference mask (raw + JSON sidecar).
        #[arg(long, value_name = "PATH")]
        gt: PathBuf,
        /// Also write the metrics CSV here.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Emit convergence traces and the pivot-walk overlap experiment.
    Diag,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| {
        Failure::Config("this command needs --config pointing at a pipeline JSON file".into())
    })?;
    let mut cfg = PipelineConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = cli.seed {
        cfg.override_seeds(seed);
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    if cli.print_effective_config {
        let cfg = load_config(cli)?;
        let text = serde_json::to_string_pretty(&cfg)
            .map_err(|e| Failure::Runtime(format!("config serialization: {e}")))?;
        println!("{text}");
        return Ok(());
    }
    match &cli.command {
        Command::Phantom => commands::phantom(&load_config(cli)?),
        Command::Prepare => commands::prepare(&load_config(cli)?),
        Command::Train => commands::train(&load_config(cli)?),
        Command::Segment => commands::segment(&load_config(cli)?),
        Command::Eval { pred, gt, out } => commands::eval(pred, gt, out.as_deref()),
        Command::Diag => commands::diag(&load_config(cli)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
