//! The learning stages: encoder pretraining, diffusion training,
//! few-shot fine-tuning, and generation.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use weightforge_core::augment::AugmentPolicy;
use weightforge_core::diffusion::{DiffusionTrainOptions, StepLosses};
use weightforge_core::encoder::PretrainOptions;
use weightforge_core::fewshot::{self, SupportSet};
use weightforge_core::inr::{image_to_pnm, render_image, WeightVector};
use weightforge_core::mesh::render_mesh;
use weightforge_core::persist::{
    load_diffusion, load_encoder, save_diffusion, save_encoder, save_weights, write_manifest,
    ManifestEntry,
};

use crate::{load_config, load_dataset, resolve_seed, Dataset};

#[derive(Args)]
pub struct PretrainEncoderArgs {
    /// Dataset directory from make-dataset
    #[arg(long)]
    pub data: PathBuf,
    /// Run configuration file (defaults apply when omitted)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output encoder checkpoint
    #[arg(long)]
    pub out: PathBuf,
}

pub fn pretrain_encoder(args: PretrainEncoderArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let seed = resolve_seed(cfg.seed)?;
    let data = load_dataset(&args.data)?;
    let arch = data.weights[0].arch.clone();

    let opts = PretrainOptions {
        epochs: cfg.pretrain_epochs,
        batch: cfg.pretrain_batch,
        lr: cfg.pretrain_lr,
        weight_decay: cfg.pretrain_weight_decay,
        seed,
        use_smoothing: cfg.use_smoothing,
        smooth_restarts: cfg.smooth_restarts,
    };
    let policy = AugmentPolicy::default_for(&arch);
    let (encoder, losses) =
        weightforge_core::encoder::pretrain(&data.weights, &policy, &cfg.encoder_config(), &opts)?;
    save_encoder(&encoder, &args.out)?;
    println!(
        "pretrain-encoder: {} items, {} epochs, loss {:.6} -> {:.6}, wrote {}",
        data.weights.len(),
        losses.len(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct TrainDiffusionArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Pretrained encoder checkpoint (frozen; embedded into the output)
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train_diffusion(args: TrainDiffusionArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let seed = resolve_seed(cfg.seed)?;
    let data = load_dataset(&args.data)?;
    let arch = data.weights[0].arch.clone();
    let encoder = load_encoder(&args.encoder)?;
    if encoder.arch != arch {
        bail!("encoder was pretrained for a different architecture");
    }

    // an "epoch" is one pass worth of sampled batches
    let steps_per_epoch = data.weights.len().div_ceil(cfg.diffusion_batch).max(1);
    let mut dconfig = cfg.denoiser_config(&arch);
    dconfig.psi_dim = encoder.config.feature_dim;
    let opts = DiffusionTrainOptions {
        steps: cfg.diffusion_epochs * steps_per_epoch,
        batch: cfg.diffusion_batch,
        t_max: cfg.t_max,
        lambda: cfg.lambda,
        lr: cfg.diffusion_lr,
        weight_decay: 0.0,
        lr_decay_every: cfg.lr_decay_every * steps_per_epoch,
        lr_decay_factor: cfg.lr_decay_factor,
        ema_beta: cfg.ema_beta,
        seed,
    };
    let (state, history) =
        weightforge_core::diffusion::train_diffusion(&data.weights, &encoder, &dconfig, &opts)?;
    save_diffusion(&state, &encoder, &args.out)?;
    println!(
        "train-diffusion: {} items, {} steps, {}, wrote {}",
        data.weights.len(),
        history.len(),
        loss_span(&history),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct FinetuneArgs {
    /// Trained diffusion checkpoint (with embedded encoder)
    #[arg(long)]
    pub diffusion: PathBuf,
    /// Support dataset directory (first k manifest items are used)
    #[arg(long)]
    pub support: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn finetune(args: FinetuneArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let seed = resolve_seed(cfg.seed)?;
    let (mut state, encoder) = load_diffusion(&args.diffusion)?;
    let support = build_support(&args.support, &encoder, &cfg, seed)?;
    let history = fewshot::finetune(&mut state, &support, cfg.finetune_epochs, Some(&encoder))?;
    save_diffusion(&state, &encoder, &args.out)?;
    println!(
        "finetune: k={}, {} epochs, {}, wrote {}",
        support.k(),
        history.len(),
        loss_span(&history),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub diffusion: PathBuf,
    #[arg(long)]
    pub support: PathBuf,
    /// Number of samples
    #[arg(long)]
    pub n: usize,
    /// Subspace disturbance strength
    #[arg(long, default_value_t = fewshot::DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (weights/ + manifest.tsv)
    #[arg(long)]
    pub out: PathBuf,
    /// Also render samples (PGM/PPM for 2-D, OBJ meshes for 3-D)
    #[arg(long)]
    pub render: bool,
    /// Render resolution
    #[arg(long, default_value_t = 16)]
    pub res: usize,
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let seed = resolve_seed(args.seed)?;
    let (state, encoder) = load_diffusion(&args.diffusion)?;
    let support = build_support(&args.support, &encoder, &cfg, seed)?;
    let steps = cfg.ddim_steps.min(state.schedule.t_max);
    let samples = fewshot::generate_with_steps(&state, &support, args.n, args.gamma, steps, seed)?;

    let weights_dir = args.out.join("weights");
    fs::create_dir_all(&weights_dir)
        .with_context(|| format!("creating {}", weights_dir.display()))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, w) in samples.iter().enumerate() {
        let rel = format!("weights/gen_{i:03}.wfg");
        save_weights(w, args.out.join(&rel))?;
        entries.push(ManifestEntry {
            path: rel,
            class: w.class_label.clone().unwrap_or_else(|| "-".into()),
            psnr: f64::NAN,
            seed,
        });
    }
    write_manifest(&entries, args.out.join("manifest.tsv"))?;
    if args.render {
        render_samples(&args, &samples)?;
    }
    println!(
        "generate: {} samples (gamma {}, {} DDIM steps), wrote {}",
        samples.len(),
        args.gamma,
        steps,
        args.out.display()
    );
    Ok(())
}

fn render_samples(args: &GenerateArgs, samples: &[WeightVector]) -> Result<()> {
    if samples[0].arch.coord_dim == 2 {
        let dir = args.out.join("renders");
        fs::create_dir_all(&dir)?;
        for (i, w) in samples.iter().enumerate() {
            let img = render_image(w, args.res)?;
            let ext = if w.arch.out_dim() == 1 { "pgm" } else { "ppm" };
            fs::write(dir.join(format!("gen_{i:03}.{ext}")), image_to_pnm(&img)?)?;
        }
    } else {
        let dir = args.out.join("meshes");
        fs::create_dir_all(&dir)?;
        for (i, w) in samples.iter().enumerate() {
            let mesh = render_mesh(w, args.res, 0.5)?;
            fs::write(dir.join(format!("gen_{i:03}.obj")), mesh.to_obj())?;
        }
    }
    Ok(())
}

/// Load a support directory and keep the first `k` manifest items.
fn build_support(
    dir: &PathBuf,
    encoder: &weightforge_core::encoder::EquivariantEncoder,
    cfg: &weightforge_core::config::RunConfig,
    seed: u64,
) -> Result<SupportSet> {
    let Dataset { weights, .. } = load_dataset(dir)?;
    let k = cfg.k.min(weights.len());
    let support = SupportSet::new(&weights[..k], encoder, cfg.smooth_restarts, seed)?;
    Ok(support)
}

fn loss_span(history: &[StepLosses]) -> String {
    match (history.first(), history.last()) {
        (Some(a), Some(b)) => format!("loss {:.6} -> {:.6}", a.total, b.total),
        _ => "no steps".into(),
    }
}
