//! `make-dataset`: procedural signals → fitted INR weights on disk.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;

use weightforge_core::inr::{evaluate, fit, psnr, MlpArchitecture};
use weightforge_core::persist::{save_weights, write_manifest, ManifestEntry};
use weightforge_core::rng::mix;
use weightforge_core::synth::{SignalKind, SignalSpec};

use crate::resolve_seed;

const PSNR_GATE_DB: f64 = 25.0;

#[derive(Args)]
pub struct MakeDatasetArgs {
    /// Number of classes to synthesize
    #[arg(long)]
    pub classes: usize,
    /// Items per class
    #[arg(long)]
    pub per_class: usize,
    /// Signal family: blobs2d | digits-like | spheres3d | superquadrics3d
    #[arg(long)]
    pub kind: String,
    /// Architecture preset or spec string (e.g. mnist, sine:2-16-1)
    #[arg(long)]
    pub arch: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,
    /// Optimization steps per fit
    #[arg(long, default_value_t = 1500)]
    pub steps: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    /// Signal grid resolution (default: family-specific)
    #[arg(long)]
    pub res: Option<usize>,
    /// Parallel fit workers
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

enum FitReport {
    Done { entry: ManifestEntry, flagged: bool },
    Diverged { step: usize },
}

pub fn run(args: MakeDatasetArgs) -> Result<()> {
    if args.classes == 0 || args.per_class == 0 {
        bail!("--classes and --per-class must be >= 1");
    }
    let kind = SignalKind::parse(&args.kind)?;
    let arch = MlpArchitecture::parse(&args.arch)?;
    if arch.coord_dim != kind.coord_dim() {
        bail!(
            "architecture expects {}-D coordinates but `{}` signals are {}-D",
            arch.coord_dim,
            kind.as_str(),
            kind.coord_dim()
        );
    }
    let seed = resolve_seed(args.seed)?;
    let res = args.res.unwrap_or_else(|| kind.default_res());

    let weights_dir = args.out.join("weights");
    fs::create_dir_all(&weights_dir)
        .with_context(|| format!("creating {}", weights_dir.display()))?;

    let items: Vec<(usize, usize)> = (0..args.classes)
        .flat_map(|c| (0..args.per_class).map(move |i| (c, i)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .context("building fit worker pool")?;
    let reports: Vec<FitReport> = pool.install(|| {
        items
            .par_iter()
            .map(|&(c, i)| fit_one(kind, &arch, seed, res, &args, c, i))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut entries = Vec::new();
    let mut failed = 0;
    let mut flagged = 0;
    for (&(c, i), report) in items.iter().zip(&reports) {
        match report {
            FitReport::Done { entry, flagged: low } => {
                if *low {
                    flagged += 1;
                    println!(
                        "make-dataset: class {c} item {i}: psnr {:.2} dB below the {PSNR_GATE_DB} dB gate",
                        entry.psnr
                    );
                }
                entries.push(entry.clone());
            }
            FitReport::Diverged { step } => {
                failed += 1;
                println!("make-dataset: class {c} item {i}: fit diverged at step {step}, skipped");
            }
        }
    }

    write_manifest(&entries, args.out.join("manifest.tsv"))?;
    println!(
        "make-dataset: {} weights ({} classes x {} items, {} diverged, {} flagged) -> {}",
        entries.len(),
        args.classes,
        args.per_class,
        failed,
        flagged,
        args.out.display()
    );
    Ok(())
}

fn fit_one(
    kind: SignalKind,
    arch: &MlpArchitecture,
    seed: u64,
    res: usize,
    args: &MakeDatasetArgs,
    class: usize,
    item: usize,
) -> Result<FitReport> {
    let spec = SignalSpec::new(kind, class, seed);
    let signal = spec.sample(item, res, arch.out_dim())?;
    let fit_seed = mix(mix(seed, 0xF17), (class * args.per_class + item) as u64);
    let outcome = match fit(&signal, arch, args.steps, args.lr, fit_seed) {
        Ok(o) => o,
        Err(weightforge_core::Error::Training { step }) => {
            return Ok(FitReport::Diverged { step })
        }
        Err(e) => return Err(e.into()),
    };
    let pred = evaluate(&outcome.weights, &signal.coords)?;
    let quality = psnr(&pred, &signal.targets);

    let w = outcome.weights.with_class(class.to_string());
    let rel = format!("weights/c{class:02}_i{item:03}.wfg");
    save_weights(&w, args.out.join(&rel))?;
    Ok(FitReport::Done {
        entry: ManifestEntry {
            path: rel,
            class: class.to_string(),
            psnr: quality,
            seed: fit_seed,
        },
        flagged: quality < PSNR_GATE_DB,
    })
}
