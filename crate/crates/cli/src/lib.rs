//! Command implementations behind the `fc2mfn` binary.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "fc2mfn", version, about = "Complex-valued InSAR segmentation: data, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every command.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// `key = value` config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// toy or paper
    #[arg(long)]
    pub preset: Option<String>,
    /// Override any config key, e.g. `--set model.delta=0.5` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train on a generated dataset and write a checkpoint
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print metrics of a checkpoint on one split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// train, test or all
        #[arg(long, default_value = "test")]
        split: String,
        /// Exit with status 1 if mean IoU falls below this value
        #[arg(long)]
        min_miou: Option<f64>,
    },
    /// Decode one sample to a label map
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a PPM color map next to the output
        #[arg(long)]
        debug: bool,
    },
    /// Finite-difference check of every layer and the whole network
    Gradcheck {
        #[arg(long, default_value = "toy")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds starting at --seed
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = fc2mfn::gradsuite::DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Itemized parameter, FLOP and size report
    Report {
        #[command(flatten)]
        common: Common,
    },
}
