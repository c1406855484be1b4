//! Command-line front end: `calibrate`, `solve`, `mm` and `simulate`.
//!
//! Exit codes are 0 on success, 1 on I/O failure, 2 for config or
//! validation errors and 3 for numerical failures (blow-up, accuracy).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{Overrides, RunConfig, StepTarget};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "regime-games", version, about = "Regime-switching games solvers and market-making experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// RNG seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Monte Carlo paths.
    #[arg(long, global = true)]
    pub paths: Option<usize>,

    /// Time steps of the command's grid; the step size is rescaled.
    #[arg(long, global = true)]
    pub steps: Option<usize>,

    /// Reverse the reported bang-bang indicator policy of the macro game.
    #[arg(long, global = true)]
    pub flip_bangbang_orientation: bool,

    /// Clamp proportional macro efforts to [0, 1].
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub clamp_efforts: Option<bool>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate regime volatilities and switching rates from OHLCV bars.
    Calibrate {
        /// CSV with timestamp,open,high,low,close,volume.
        csv: Option<PathBuf>,
    },
    /// Solve the coupled Riccati / switching-game hierarchy.
    Solve,
    /// Build the θ and quote tables of the market-making game.
    Mm,
    /// Monte Carlo comparison of vanilla and equilibrium quoting.
    Simulate,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out_dir: self.out.clone(),
            paths: self.paths,
            steps: self.steps,
            flip_bang_bang: self.flip_bangbang_orientation,
            clamp_efforts: self.clamp_efforts,
        }
    }

    /// The file config (or defaults) with command-line overrides applied.
    pub fn run_config(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let target = match self.command {
            Command::Calibrate { .. } => StepTarget::None,
            Command::Solve => StepTarget::Lq,
            Command::Mm => StepTarget::Mm,
            Command::Simulate => StepTarget::Simulation,
        };
        cfg.apply(&self.overrides(), target);
        cfg.check_files()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::Calibrate { csv } => {
            commands::print_calibration(&commands::cmd_calibrate(&cfg, csv.as_deref())?);
            Ok(())
        }
        Command::Solve => {
            commands::print_solve(&commands::cmd_solve(&cfg)?);
            Ok(())
        }
        Command::Mm => commands::print_mm(&cfg, &commands::cmd_mm(&cfg)?),
        Command::Simulate => {
            commands::print_simulation(&commands::cmd_simulate(&cfg)?);
            Ok(())
        }
    }
}
