use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use forgetting_cli::{emit_summary, load_config, run_experiment, VerdictOverride};

/// Run and summarize forgetting audits.
#[derive(Parser)]
#[command(name = "audit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Print a report for a finished run directory.
    Summarize {
        dir: PathBuf,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        offset: Option<usize>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let artifact = run_experiment(&cfg)?;
            println!("config hash {}", artifact.config_hash);
            println!("wrote {} files to {}", artifact.files.len(), artifact.output_dir.display());
            print!("{}", emit_summary(&artifact.output_dir, &VerdictOverride::default())?);
        }
        Command::Summarize { dir, metric, alpha, offset } => {
            print!("{}", emit_summary(&dir, &VerdictOverride { metric, alpha, offset })?);
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("{}: valid {} config, hash {}", config.display(), cfg.experiment.kind.name(), cfg.hash());
        }
    }
    Ok(())
}
