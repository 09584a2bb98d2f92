//! Command-line pipeline: data generation, compression fitting, training,
//! simulation and evaluation.

pub mod commands;
pub mod config;
pub mod container;
pub mod store;

use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "spclosure", version, about = "Learned closures for coarse 1D Burgers and KdV simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Random seed (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print every configuration key with its default and exit.
    #[arg(long, global = true)]
    pub list_keys: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Generate reference trajectories and the snapshot dataset.
    Datagen,
    /// Fit the SGS compression on the training snapshots.
    Compress,
    /// Train (or fit) a coarse model and write a checkpoint.
    Train,
    /// Simulate a condition with a checkpoint, or with the reference solver for `model = dns`.
    Simulate,
    /// Compare a coarse run to a reference run.
    Evaluate,
    /// Time-averaged energy spectrum of a run.
    Spectrum,
    /// Run the numerical verification suites.
    Verify,
    /// Hyperparameter sweep of the structure-preserving closure.
    Tune,
}

impl Cli {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        if let Some(o) = &self.out {
            cfg.set("out", &o.to_string_lossy())?;
        }
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got {kv:?}"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if cli.list_keys {
        for (k, d, help) in config::KEYS {
            println!("{k:<22} {:<26} {help}", if d.is_empty() { "-" } else { d });
        }
        return Ok(());
    }
    let cfg = cli.run_config()?;
    match cli.command {
        Command::Datagen => commands::datagen(&cfg),
        Command::Compress => commands::compress(&cfg),
        Command::Train => commands::train_model(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Spectrum => commands::spectrum(&cfg),
        Command::Verify => commands::verify(&cfg),
        Command::Tune => commands::tune(&cfg),
    }
}
