//! `weightforge` — one binary, subcommands for every pipeline stage:
//! synthesize + fit a weight dataset, pretrain the equivariant encoder,
//! train the conditioned diffusion model, fine-tune on a support set,
//! generate, evaluate, and the smooth/equicheck utilities.
//!
//! Every command prints a single deterministic summary line on success
//! and exits nonzero on contract errors. `WEIGHTFORGE_SEED` overrides
//! the seed a command would otherwise use (flag or config).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use weightforge_core::config::RunConfig;
use weightforge_core::inr::WeightVector;
use weightforge_core::persist::{load_weights, read_manifest, ManifestEntry};

mod dataset;
mod pipeline;
mod report;
mod tools;

#[derive(Parser)]
#[command(name = "weightforge", version, about = "Few-shot INR weight generation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize signals, fit one INR per item, write weights + manifest
    MakeDataset(dataset::MakeDatasetArgs),
    /// Contrastively pretrain the permutation-equivariant encoder
    PretrainEncoder(pipeline::PretrainEncoderArgs),
    /// Train the feature-conditioned weight diffusion model
    TrainDiffusion(pipeline::TrainDiffusionArgs),
    /// Adapt a trained diffusion model to a small support set
    Finetune(pipeline::FinetuneArgs),
    /// Sample new weights conditioned on (disturbed) support features
    Generate(pipeline::GenerateArgs),
    /// Compare a generated set against a reference set
    Evaluate(report::EvaluateArgs),
    /// Canonicalize a weight file by TV-minimizing neuron reordering
    Smooth(tools::SmoothArgs),
    /// Verify functional equivalence of weight files under permutation
    Equicheck(tools::EquicheckArgs),
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Command::MakeDataset(args) => dataset::run(args),
        Command::PretrainEncoder(args) => pipeline::pretrain_encoder(args),
        Command::TrainDiffusion(args) => pipeline::train_diffusion(args),
        Command::Finetune(args) => pipeline::finetune(args),
        Command::Generate(args) => pipeline::generate(args),
        Command::Evaluate(args) => report::evaluate(args),
        Command::Smooth(args) => tools::smooth(args),
        Command::Equicheck(args) => tools::equicheck(args),
    }
}

/// `WEIGHTFORGE_SEED` beats whatever the flag or config file says.
pub fn resolve_seed(fallback: u64) -> Result<u64> {
    match std::env::var("WEIGHTFORGE_SEED") {
        Ok(s) => s.parse().with_context(|| format!("WEIGHTFORGE_SEED=`{s}` is not a u64")),
        Err(_) => Ok(fallback),
    }
}

pub fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

/// A dataset directory: `manifest.tsv` plus the weight files it names
/// (paths relative to the directory).
pub struct Dataset {
    pub entries: Vec<ManifestEntry>,
    pub weights: Vec<WeightVector>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = dir.join("manifest.tsv");
    let entries =
        read_manifest(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    if entries.is_empty() {
        bail!("dataset {} is empty", dir.display());
    }
    let mut weights = Vec::with_capacity(entries.len());
    for e in &entries {
        let path = dir.join(&e.path);
        weights.push(load_weights(&path).with_context(|| format!("loading {}", path.display()))?);
    }
    Ok(Dataset { entries, weights })
}
