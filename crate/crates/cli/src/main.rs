mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "brunet", version, about = "BRU-net retinal layer segmentation: data, training, evaluation")]
struct Cli {
    /// Run configuration (TOML); defaults to the desk profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the network architecture (brunet or unet).
    #[arg(long, global = true)]
    arch: Option<String>,
    /// Override the dataset directory read by train and eval.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Run the engine in 64-bit floating point.
    #[arg(long, global = true)]
    f64: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter schedules, parameter counts and receptive fields, plus the
    /// full-scale size claims.
    Analyze,
    /// Write a synthetic dataset into the output directory.
    GenData,
    /// Optional autoencoder pretraining, then training on the configured fold.
    Train,
    /// Segment the test fold and score it against ground truth.
    Eval {
        #[arg(long, required_unless_present = "ground_truth")]
        checkpoint: Option<PathBuf>,
        /// Score the ground truth against itself instead of a network.
        #[arg(long)]
        ground_truth: bool,
    },
    /// Paired t-tests between two per-patient score files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "A vs B")]
        label: String,
    },
    /// Finite-difference check of every op and of small whole networks.
    Gradcheck {
        #[arg(long)]
        ops_only: bool,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(arch) = cli.arch {
        cfg.net.arch = arch;
    }
    if let Some(data) = cli.data {
        cfg.data.dir = data;
    }
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output.dir)?;
    std::fs::write(cfg.output.dir.join("config.toml"), cfg.to_text())?;

    match cli.command {
        Command::Analyze => commands::analyze(&cfg),
        Command::GenData => commands::gen_data(&cfg),
        Command::Train if cli.f64 => commands::train::<f64>(&cfg),
        Command::Train => commands::train::<f32>(&cfg),
        Command::Eval { checkpoint, ground_truth } => {
            let ck = if ground_truth { None } else { checkpoint };
            if cli.f64 {
                commands::eval::<f64>(&cfg, ck.as_deref())
            } else {
                commands::eval::<f32>(&cfg, ck.as_deref())
            }
        }
        Command::Compare { a, b, label } => commands::compare(&cfg, &a, &b, &label),
        Command::Gradcheck { ops_only } => commands::gradcheck(&cfg, ops_only),
    }
}
