use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spectral_moduli_cli::{execute, load_config, CliError, Command};

#[derive(Parser)]
#[command(name = "spectral-moduli", version, about = "Graph dynamics and structure-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config value, e.g. `--set learn_graph.optimizer.T=100`.
    #[arg(long = "set", value_name = "K=V", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Integrate one system and log its invariants.
    Simulate,
    /// Compare the amplitude flow with its spin counterpart.
    GaugeCheck,
    /// Run the moduli optimiser on a teacher task.
    LearnGraph,
    /// Train the model and the dense baseline.
    Train,
    /// Summarise the outputs already in `--out`.
    Report,
}

fn threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("SPECTRAL_MODULI_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("SPECTRAL_MODULI_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))
}

fn main_inner(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    threads()?;
    let cmd = match cli.command {
        Cmd::Simulate => Command::Simulate,
        Cmd::GaugeCheck => Command::GaugeCheck,
        Cmd::LearnGraph => Command::LearnGraph,
        Cmd::Train => Command::Train,
        Cmd::Report => Command::Report,
    };
    let config = match &cli.config {
        Some(p) => Some(load_config(p, &cli.set, cli.seed)?),
        None if cmd == Command::Report => None,
        None => return Err(CliError::Config(format!("{} needs --config", cmd.name()))),
    };
    let out = cli.out.or_else(|| config.as_ref().and_then(|c| c.output_dir.clone())).unwrap_or_else(|| PathBuf::from("out"));
    execute(cmd, config.as_ref(), &out)
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
