//! `l2net` — synthetic MRI-style data, euclidean-norm-pooling networks for
//! slice classification and lesion detection, gradient verification, and the
//! evaluation/ablation harness around them.
//!
//! Exit codes: 0 success, 1 usage error (bad flags or config), 2 data error
//! (missing or malformed files), 3 numerical failure (divergence or a failed
//! gradient check).

mod config;
mod data;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};

use l2net_core::gradcheck::Scope;
use l2net_core::Error;

use config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "l2net", version, about = "Euclidean-norm pooling networks on synthetic MRI-like volumes")]
struct Cli {
    /// Flat key=value config file (keys documented in the README).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for emitted artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Evaluation report format; csv additionally writes the five-column
    /// summary table.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the seeded synthetic dataset with split indexes and manifest.
    Synth,
    /// Train the five-class slice classifier.
    TrainClassify {
        /// Dataset directory produced by `synth`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the proposal-based lesion detector.
    TrainDetect {
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        /// Checkpoint file written by one of the trainers.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Subset name: train/test (classification) or train/val/test
        /// (detection).
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        /// Suite selection: l2, layers, pyramid or all.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Train one detector per modality subset and tabulate test Dice.
    AblateModality {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train paired detectors with euclidean-norm vs max pooling.
    AblatePooling {
        #[arg(long)]
        data: PathBuf,
    },
    /// Validate emitted artifacts against their documented schemas.
    SchemaCheck {
        /// Directory of artifacts (a dataset dir, an output dir, or both).
        #[arg(long)]
        path: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::BadConfig(_) | Error::BadSubset | Error::WindowLargerThanInput { .. } => 1,
        Error::DivergedLoss { .. }
        | Error::NonFiniteInput(_)
        | Error::NonFiniteFunctionValue
        | Error::NotScalarLoss(_)
        | Error::DetachedLoss => 3,
        _ => 2,
    }
}

fn load_config(cli: &Cli) -> l2net_core::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> l2net_core::Result<u8> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth => commands::synth::run(&cfg, &cli.out)?,
        Command::TrainClassify { data } => {
            commands::train_classify::run(&cfg, data, &cli.out, cli.format)?
        }
        Command::TrainDetect { data } => commands::train_detect::run(&cfg, data, &cli.out)?,
        Command::Eval { model, data, split } => {
            commands::eval::run(&cfg, model, data, split, &cli.out, cli.format)?
        }
        Command::Gradcheck { scope, tolerance } => {
            let scope = Scope::from_str(scope)?;
            if !(*tolerance > 0.0) {
                return Err(Error::BadConfig(format!(
                    "tolerance must be positive, got {tolerance}"
                )));
            }
            let seed = cfg.seed_or(2024);
            if !commands::gradcheck::run(scope, seed, *tolerance)? {
                return Ok(3);
            }
        }
        Command::AblateModality { data } => commands::ablate::modality(&cfg, data, &cli.out)?,
        Command::AblatePooling { data } => commands::ablate::pooling(&cfg, data, &cli.out)?,
        Command::SchemaCheck { path } => commands::schema::run(path)?,
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems are exit 1 regardless of clap's own convention.
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
