//! `bitenet`: synthesize journeys, train and evaluate BiteNet, export code
//! embeddings and attention traces.

mod commands;
mod config;
mod dataset;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "bitenet", version, about = "Bidirectional temporal encoder over EHR patient journeys")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic journey file, category map and planted truth.
    Synth(Common),
    /// Preprocess, split, train and score the test split.
    Train(Common),
    /// Score a parameter file on the test split.
    Evaluate(Common),
    /// Export code embeddings.
    Embed(Common),
    /// Export attention traces for selected patients.
    Explain(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', value_name = "S1,S2,...")]
    seeds: Option<Vec<u64>>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for pair in &self.set {
            cfg.apply_override(pair)?;
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let (common, command): (&Common, fn(&RunConfig, bool) -> Result<()>) = match &cli.command {
        Command::Synth(c) => (c, commands::synth),
        Command::Train(c) => (c, commands::train_cmd),
        Command::Evaluate(c) => (c, commands::evaluate_cmd),
        Command::Embed(c) => (c, commands::embed_cmd),
        Command::Explain(c) => (c, commands::explain_cmd),
    };
    let cfg = common.run_config()?;
    command(&cfg, common.force)
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
