//! Command-line experiment runner: parses a JSON config, runs one check
//! family, and writes CSV reports and SVG plots.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::Config;
pub use error::CliError;

pub const OUT_DIR_ENV: &str = "GCSTEIN_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "gcstein-out";

#[derive(Debug, Parser)]
#[command(
    name = "gcstein",
    version,
    about = "Simulation and verification workbench for queues with general clocks"
)]
pub struct Cli {
    /// JSON config with `model`, `run`, `checks` and `output` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Events per replication.
    #[arg(long, global = true)]
    pub events: Option<u64>,
    /// Events discarded before measuring.
    #[arg(long = "burn-in", global = true)]
    pub burn_in: Option<u64>,
    /// Worker threads for replications.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory (default: config, then $GCSTEIN_OUT_DIR, then ./gcstein-out).
    #[arg(long = "out-dir", global = true)]
    pub out_dir: Option<PathBuf>,
    /// Print the effective config with all defaults and exit.
    #[arg(long = "print-config", global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Raw time averages and event rates.
    Simulate,
    /// Stationary identity suite (G/G/1 or JSQ).
    Identities,
    /// Adjoint-relation residuals and expansion checks.
    Bar,
    /// Poisson-equation solutions and Stein factors.
    Stein,
    /// Explicit error-bound formulas (G/G/1).
    Bound,
    /// Empirical Wasserstein-1 distance against the bound (G/G/1).
    W1,
    /// Load sweep of the distance with a decay-rate fit (G/G/1).
    Sweep,
    /// Reflected Brownian motion for the tandem model.
    Rbm,
}

impl Cli {
    /// Loads the config file (or defaults) and applies flag overrides.
    pub fn resolve(&self) -> Result<Config, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Read {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                Config::from_json(&text)?
            }
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(e) = self.events {
            cfg.run.events = e;
        }
        if let Some(b) = self.burn_in {
            cfg.run.burn_in = Some(b);
        }
        if let Some(j) = self.jobs {
            cfg.run.jobs = j;
        }
        if let Some(d) = &self.out_dir {
            cfg.output.dir = Some(d.clone());
        }
        if cfg.output.dir.is_none() {
            let dir = std::env::var_os(OUT_DIR_ENV)
                .map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from);
            cfg.output.dir = Some(dir);
        }
        Ok(cfg)
    }
}

/// Runs the parsed command line; `Ok(true)` iff every enabled check passed.
pub fn run<W: Write>(cli: &Cli, out: &mut W) -> Result<bool, CliError> {
    let cfg = cli.resolve()?;
    if cli.print_config {
        let _ = writeln!(out, "{}", cfg.to_json());
        return Ok(true);
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no command given; see --help".into()));
    };
    commands::execute(command, &cfg, out)
}
