use std::path::PathBuf;

use abqfe_core::config::ExperimentConfig;
use abqfe_core::experiments::{self, Command, RunContext};
use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};

/// Adaptive Bayesian GHZ clock simulations.
#[derive(Debug, Parser)]
#[command(name = "abqfe-clock", version)]
struct Cli {
    command: CommandArg,
    /// TOML experiment config (see presets/).
    #[arg(long)]
    config: PathBuf,
    /// Master seed for every random stream.
    #[arg(long)]
    seed: u64,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Write replica 0's final posterior for each adaptive run.
    #[arg(long)]
    dump_posterior: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CommandArg {
    Scaling,
    DynamicRange,
    Allan,
    NoiseSweep,
    OracleCheck,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::Scaling => Command::Scaling,
            CommandArg::DynamicRange => Command::DynamicRange,
            CommandArg::Allan => Command::Allan,
            CommandArg::NoiseSweep => Command::NoiseSweep,
            CommandArg::OracleCheck => Command::OracleCheck,
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        anyhow::ensure!(n >= 1, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building thread pool")?;
    }
    let config = ExperimentConfig::from_path(&cli.config)?;
    let command = Command::from(cli.command);
    let ctx = RunContext {
        seed: cli.seed,
        out_dir: cli.out.clone(),
        dump_posterior: cli.dump_posterior,
    };
    let manifest = experiments::run_command(command, &config, &ctx)
        .with_context(|| format!("running {}", command.name()))?;
    for file in &manifest.outputs {
        println!("{}", cli.out.join(file).display());
    }
    println!("{}", experiments::manifest_path(&cli.out).display());
    Ok(())
}
