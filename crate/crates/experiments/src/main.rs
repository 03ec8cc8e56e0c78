use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ftn_experiments::{ExperimentConfig, ExperimentKind, RunError};

#[derive(Parser)]
#[command(name = "ftn", version = ftn_experiments::report::BUILD_ID, about = "Learnable pooling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train single pooling units to mimic max or average pooling.
    Approx(Common),
    /// Train a classifier on CIFAR.
    Classify(Common),
    /// Count the locations chosen by max pooling in a trained network.
    AnalyzeLocations(Common),
    /// Probe pooling units with regions of known maximum.
    AnalyzeResponse(Common),
    /// Finite-difference check of the pooling gradients.
    Gradcheck(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; unspecified keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path override, e.g. `approx.lens=[9]`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (kind, common) = match cli.command {
        Command::Approx(c) => (ExperimentKind::Approx, c),
        Command::Classify(c) => (ExperimentKind::Classify, c),
        Command::AnalyzeLocations(c) => (ExperimentKind::AnalyzeLocations, c),
        Command::AnalyzeResponse(c) => (ExperimentKind::AnalyzeResponse, c),
        Command::Gradcheck(c) => (ExperimentKind::Gradcheck, c),
    };
    let mut overrides = common.overrides;
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(o) = &common.out {
        overrides.push(format!("out_dir={}", serde_json::Value::String(o.display().to_string())));
    }
    let cfg = ExperimentConfig::load(common.config.as_deref(), kind, &overrides)?;
    let summary = ftn_experiments::run(&cfg).with_context(|| format!("{} run into {}", kind.name(), cfg.out_dir.display()))?;
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<RunError>().map_or(1, RunError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
