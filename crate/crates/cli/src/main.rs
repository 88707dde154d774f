use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use gridabs_cli::{run, Command, Config, Overrides};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Predict,
    Optimize,
    Abstract,
    Compare,
    Certify,
}

/// Grid abstractions: predict, optimize, build and compare transition counts.
#[derive(Debug, Parser)]
#[command(name = "gridabs", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for the build (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV file to append a result row to.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Transition file to write.
    #[arg(long)]
    transitions: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Predict => Command::Predict,
        Cmd::Optimize => Command::Optimize,
        Cmd::Abstract => Command::Abstract,
        Cmd::Compare => Command::Compare,
        Cmd::Certify => Command::Certify,
    };
    let overrides = Overrides {
        threads: cli.threads,
        seed: cli.seed,
        csv: cli.csv,
        transitions: cli.transitions,
    };
    let result = Config::load(&cli.config).and_then(|cfg| run(command, cfg, &overrides));
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gridabs: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
