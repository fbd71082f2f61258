//! Command-line front end: parses flags, builds the run configuration, and
//! dispatches to the command functions in the library.
//!
//! Configuration precedence, lowest to highest: built-in defaults, the
//! `--config` file, repeated `--set key=value` overrides, then the dedicated
//! flags (`--seed`, `--out`, and per-subcommand ones).

use clap::{Parser, Subcommand};
use hourglass_pose::cli::{cmd_bench, cmd_eval, cmd_predict, cmd_synth, cmd_train};
use hourglass_pose::config::RunConfig;
use hourglass_pose::{Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hgpose",
    version,
    about = "Stacked-hourglass upper-limb keypoint toolkit",
    long_about = "Generates synthetic training scenes, trains the stacked-hourglass \
                  detector, predicts 7 upper-limb keypoints, scores PCKh accuracy, and \
                  benchmarks model variants. All behavior is driven by a flat key-value \
                  config file; every key can also be set on the command line."
)]
struct Cli {
    /// Key-value config file (one `section.key = value` per line).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides train.seed.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Overrides paths.out.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Extra config override, e.g. --set model.num_stacks=4 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset.
    Synth {
        /// Overrides synth.count.
        #[arg(long, value_name = "N")]
        count: Option<usize>,
    },
    /// Train on the configured dataset, writing checkpoints and a loss CSV.
    Train {
        /// Checkpoint to continue from (.weights.bin or .opt.bin; the
        /// sibling file is found automatically).
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Predict keypoints for PNG images using the configured weights.
    Predict {
        /// Images to process.
        #[arg(required = true, value_name = "IMAGE")]
        inputs: Vec<PathBuf>,
        /// Also write images with the skeleton drawn on.
        #[arg(long)]
        overlay: bool,
    },
    /// Score predictions (or the configured weights) against a labeled dataset.
    Eval {
        /// Prediction file to score; when omitted, paths.weights is run
        /// over the dataset directly.
        #[arg(long, value_name = "PATH")]
        predictions: Option<PathBuf>,
    },
    /// Compare model variants: accuracy plus single-threaded latency.
    Bench {
        /// Overrides bench.grid, e.g. sh21,sh41,sh81.
        #[arg(long, value_name = "LIST")]
        grid: Option<String>,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for item in &cli.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
        cfg.apply(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

/// Ok(true) is a clean run; Ok(false) completed with per-image failures.
fn run(cli: Cli) -> Result<bool> {
    let mut cfg = build_config(&cli)?;
    match &cli.command {
        Command::Synth { count } => {
            if let Some(n) = count {
                cfg.synth_count = *n;
            }
            cmd_synth(&cfg)?;
            Ok(true)
        }
        Command::Train { resume } => {
            cmd_train(&cfg, resume.as_deref())?;
            Ok(true)
        }
        Command::Predict { inputs, overlay } => {
            let summary = cmd_predict(&cfg, inputs, *overlay)?;
            Ok(summary.failures == 0)
        }
        Command::Eval { predictions } => {
            cmd_eval(&cfg, predictions.as_deref())?;
            Ok(true)
        }
        Command::Bench { grid } => {
            if let Some(list) = grid {
                cfg.apply("bench.grid", list)?;
            }
            cmd_bench(&cfg)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
