mod checks;
mod config;
mod error;
mod train;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "eqprop", version, about = "Equilibrium propagation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on IDX data; writes train.csv, weights.json and summary.json.
    Train(Common),
    /// Compare exact gradient, nu, finite differences, recurrent backprop
    /// and the temporal process over a seeded fleet; writes gradcheck.csv.
    Gradcheck(Common),
    /// Cosine between nu and -dJ/dtheta over a seeded fleet; writes align.csv.
    Align(Common),
    /// Time series of temporal-process versus adjoint gaps; writes rbp_compare.csv.
    RbpCompare(Common),
    /// One relaxation; writes relax.json and trajectory.csv.
    Relax(Common),
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        fs::create_dir_all(&self.out).map_err(|e| CliError::Output(format!("{}: {e}", self.out.display())))?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(c) => train::train(&c.resolve()?, &c.out),
        Command::Gradcheck(c) => checks::gradcheck(&c.resolve()?, &c.out),
        Command::Align(c) => checks::align(&c.resolve()?, &c.out),
        Command::RbpCompare(c) => checks::rbp_compare(&c.resolve()?, &c.out),
        Command::Relax(c) => train::relax(&c.resolve()?, &c.out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
