//! `psmlab`: the person-specific facial-motion pipeline from the command line.
//!
//! Every command writes its outputs and a `run_manifest.json` under `--out`.
//! Exit status is 0 on success, 2 for invalid input and 3 for failures
//! during computation.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "psmlab", version, about = "Person-specific facial-motion embeddings")]
pub struct Cli {
    /// JSON pipeline config; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct OutArg {
    /// Run directory for every output of this command.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegimeArg {
    Psm,
    Gm,
    ScratchShort,
    TransferFromGm,
    TransferFromPsm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    Dependent,
    Independent,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus as a DISFA-format tree.
    Synth {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        patterns: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Index a DISFA-format tree and compute AU statistics.
    Ingest {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        root: PathBuf,
        /// Precomputed landmark directory (defaults to `<root>/landmarks` when present).
        #[arg(long)]
        landmarks: Option<PathBuf>,
        /// Comma-separated subject subset.
        #[arg(long, value_delimiter = ',')]
        subjects: Vec<String>,
    },
    /// Detect landmarks and produce aligned face crops.
    Align {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, conflicts_with = "detector")]
        landmarks: Option<PathBuf>,
        /// External program printing 68 `x y` lines for an image path.
        #[arg(long)]
        detector: Option<PathBuf>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        grayscale: bool,
    },
    /// Train models under one regime.
    Train {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        regime: RegimeArg,
        /// Identities to train (all when omitted; ignored for gm).
        #[arg(long, value_delimiter = ',')]
        identity: Vec<String>,
        /// Pretrained bundle or training run for the transfer regimes.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        frame_fraction: Option<f64>,
        /// Curriculum as `d_min:d_max:ramp_epochs`.
        #[arg(long)]
        curriculum: Option<String>,
        /// Record person-dependent probe F1 every this many epochs.
        #[arg(long)]
        curve_every: Option<u32>,
    },
    /// Write frozen embeddings in the exchange format.
    Embed {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        dataset: PathBuf,
        /// Bundle directory or training run.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',')]
        identity: Vec<String>,
    },
    /// Linear-probe AU detection on frozen embeddings.
    Probe {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        psm: Option<PathBuf>,
        #[arg(long)]
        gm: Option<PathBuf>,
        /// Extra embeddings as `NAME=path/to/manifest.json`.
        #[arg(long)]
        table: Vec<String>,
        #[arg(long, value_enum, default_value = "dependent")]
        protocol: ProtocolArg,
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// DBSCAN sweeps, cluster AU profiles and PSM-vs-GM novelty.
    Cluster {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        psm: PathBuf,
        #[arg(long)]
        gm: PathBuf,
        #[arg(long, value_delimiter = ',')]
        identity: Vec<String>,
        #[arg(long)]
        pca_dims: Option<usize>,
        /// Use euclidean instead of L1 distance in the novelty metric.
        #[arg(long)]
        l2: bool,
    },
    /// Fine-tune a pretrained model on a few frames of a new person and
    /// compare with a short scratch run.
    TransferEval {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        dataset: PathBuf,
        /// Pretrained bundle or training run.
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        identity: String,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check that uniform noise does not map to a plausible neutral face.
    NoiseCheck {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        identity: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render figure-style plots and tables from a stage's JSON output.
    Report {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        style: String,
        #[arg(long)]
        input: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<psmlab::Error>() {
        Some(e) if e.is_validation() => 2,
        Some(_) => 3,
        None if err.downcast_ref::<commands::UsageError>().is_some() => 2,
        None => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
