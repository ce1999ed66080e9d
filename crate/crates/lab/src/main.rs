use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edl_lab::commands::{self, Outcome};
use edl_lab::{LabError, RunConfig};

/// Evidential uncertainty experiments on synthetic data.
#[derive(Debug, Parser)]
#[command(name = "edl-lab", version)]
struct Cli {
    /// TOML run configuration; defaults apply to every omitted key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `workers`.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Also write an SVG chart (`eval`).
    #[arg(long, global = true)]
    plot: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the train, test and OOD sets to CSV.
    GenData,
    /// Train one evidential model; writes a checkpoint and history.
    Train,
    /// Train (or resume) a teacher bank and distill a student.
    Distill,
    /// Evaluate a checkpoint, or train and evaluate the configured method.
    Eval,
    /// Run a lambda or sample-size sweep over several seeds.
    Sweep,
}

fn resolve(cli: &Cli) -> Result<RunConfig, LabError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<Outcome, LabError> {
    let config = resolve(cli)?;
    match cli.command {
        Command::GenData => commands::gen_data(&config),
        Command::Train => commands::train_model(&config),
        Command::Distill => commands::distill_model(&config),
        Command::Eval => commands::eval(&config, cli.plot),
        Command::Sweep => commands::sweep(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            println!("{} -> {}", outcome.summary, outcome.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
