//! Standalone weight-space utilities: smooth and equicheck.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;

use weightforge_core::inr::probe_coords;
use weightforge_core::persist::{load_weights, save_weights};
use weightforge_core::rng::mix;
use weightforge_core::symmetry::{self, max_deviation, total_variation, PermutationPlan};

use crate::resolve_seed;

#[derive(Args)]
pub struct SmoothArgs {
    /// Weight checkpoint to canonicalize
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Random restarts for the 2.5-opt search
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub probes: usize,
}

pub fn smooth(args: SmoothArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let w = load_weights(&args.weights)?;
    let tv_before = total_variation(&w);
    let (smoothed, _plan) = symmetry::smooth(&w, args.restarts, seed)?;
    let tv_after = total_variation(&smoothed);
    let probes = probe_coords(w.arch.coord_dim, args.probes, mix(seed, 0x5eed));
    let dev = max_deviation(&w, &smoothed, &probes)?;
    save_weights(&smoothed, &args.out)?;
    println!(
        "smooth: tv {tv_before:.6} -> {tv_after:.6}, max deviation {dev:.3e} over {} probes, wrote {}",
        args.probes,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct EquicheckArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Second weight file; omitted → check against a random permutation
    /// of the first
    #[arg(long)]
    pub other: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub probes: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn equicheck(args: EquicheckArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let w = load_weights(&args.weights)?;
    let other = match &args.other {
        Some(path) => load_weights(path)?,
        None => {
            let plan = PermutationPlan::random(&w.arch, mix(seed, 0x9e));
            symmetry::act(&plan, &w)?
        }
    };
    let probes = probe_coords(w.arch.coord_dim, args.probes, mix(seed, 0x5eed));
    let dev = max_deviation(&w, &other, &probes)?;
    println!(
        "equicheck: max deviation {dev:.3e} over {} probes (tol {:.1e})",
        args.probes, args.tol
    );
    if dev > args.tol {
        bail!("functional deviation {dev:.3e} exceeds tolerance {:.1e}", args.tol);
    }
    Ok(())
}
