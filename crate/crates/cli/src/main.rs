use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use stablemkv::config::ExperimentConfig;
use stablemkv::runner;

#[derive(Parser)]
#[command(
    name = "stablemkv",
    about = "Pathwise solver and sensitivity analysis for measure equations driven by stable-like processes with common noise",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario config and write its artifact directory.
    Run {
        /// Path to the TOML scenario config.
        config: PathBuf,
    },
    /// Parse and validate a config without running anything.
    Validate {
        config: PathBuf,
    },
    /// Numeric diff of two artifact directories.
    Compare {
        first: PathBuf,
        second: PathBuf,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_file(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            let outcome = runner::run_scenario(&cfg)?;
            println!("artifacts: {}", outcome.dir.display());
            if outcome.checks_passed {
                println!("checks: pass");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("checks: FAIL (see manifest.json)");
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Validate { config } => {
            match ExperimentConfig::from_file(&config) {
                Ok(cfg) => {
                    println!("ok: scenario `{}`, config hash {}", cfg.scenario, cfg.hash());
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    eprintln!("invalid config: {e}");
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        Command::Compare { first, second } => {
            let report = runner::diff_artifact_dirs(&first, &second)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.identical {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
