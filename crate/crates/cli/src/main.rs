//! `mlc`: noise injection, training, evaluation and diagnostics for the
//! label-graph multi-label classifier.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mlc_core::noise::NoiseKind;

use commands::{Failure, EXIT_USAGE};
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "mlc",
    version,
    about = "Multi-label classification with a label-graph decoder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt the labels of a dataset file.
    InjectNoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// uniform, positive, single-positive, combined or combined-one-third.
        #[arg(long)]
        kind: NoiseKind,
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model from a run configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a configuration entry (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on a labelled dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = commands::default_threshold())]
        threshold: f64,
        /// Write per-label counts and F1 to this CSV file.
        #[arg(long)]
        per_label_csv: Option<PathBuf>,
    },
    /// Distance between embeddings of frequently co-occurring labels,
    /// relative to the mean over all label pairs.
    EmbedDist {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
    },
    /// Compare analytic gradients with central differences.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn run_config(path: Option<&PathBuf>, overrides: &[String]) -> Result<RunConfig, Failure> {
    let mut rc = match path {
        Some(p) => RunConfig::load(p).map_err(|e| Failure {
            code: EXIT_USAGE,
            message: format!("{}: {e}", p.display()),
        })?,
        None => RunConfig::default(),
    };
    rc.apply_overrides(overrides)?;
    Ok(rc)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::InjectNoise {
            input,
            output,
            kind,
            rate,
            seed,
        } => commands::inject_noise(&input, &output, kind, rate, seed),
        Command::Train { config, overrides } => commands::train_cmd(&run_config(Some(&config), &overrides)?),
        Command::Evaluate {
            model,
            test,
            threshold,
            per_label_csv,
        } => commands::evaluate(&model, &test, threshold, per_label_csv.as_deref()),
        Command::EmbedDist { model, train, k } => commands::embed_dist(&model, &train, k),
        Command::GradCheck { config, overrides } => commands::grad_check_cmd(&run_config(config.as_ref(), &overrides)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
