//! Command-line interface definition.
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use tgd_core::train::TransferMode;

#[derive(Debug, Parser)]
#[command(name = "tgd", version, about = "Train and transfer GAN-image detectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Tgd,
    Naive,
    LegacySp,
    NoAug,
    InterCutmix,
}

impl From<ModeArg> for TransferMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Tgd => TransferMode::Tgd,
            ModeArg::Naive => TransferMode::Naive,
            ModeArg::LegacySp => TransferMode::LegacySp,
            ModeArg::NoAug => TransferMode::NoAug,
            ModeArg::InterCutmix => TransferMode::InterCutmix,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or import) the source and target datasets.
    Gendata(GendataArgs),
    /// Train a detector on the source dataset.
    Pretrain(PretrainArgs),
    /// Transfer a pretrained detector to the target dataset.
    Transfer(TransferArgs),
    /// Score checkpoints and write the forgetting report.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, clap::Args)]
pub struct GendataArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the artifact strength of every synthetic dataset.
    #[arg(long)]
    pub strength: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Stored source dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Teacher checkpoint directory.
    #[arg(long)]
    pub teacher: PathBuf,
    /// Stored target dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tgd")]
    pub mode: ModeArg,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct EvaluateArgs {
    /// Checkpoint after transfer.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Checkpoint before transfer.
    #[arg(long)]
    pub ckpt_before: Option<PathBuf>,
    #[arg(long)]
    pub source_data: Option<PathBuf>,
    #[arg(long)]
    pub target_data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run config whose digest is recorded in the report.
    #[arg(long)]
    pub config: Option<PathBuf>,
}
