//! `evaluate`: distribution-level comparison of generated vs reference
//! weights, written as a key=value report.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use weightforge_core::inr::render_image;
use weightforge_core::mesh::render_mesh;
use weightforge_core::metrics::{intra_diversity, mmd_cov_1nna, sample_surface_points};
use weightforge_core::rng::mix;
use weightforge_core::tensor::Tensor;

use crate::{load_dataset, resolve_seed};

const SUBSTITUTION_NOTE: &str = "pixel-space diversity and reconstruction distance substitute \
     for perceptual metrics (no pretrained networks in this pipeline)";

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// 2d (pixel metrics) or 3d (point-cloud metrics)
    #[arg(long)]
    pub mode: String,
    /// Report output path
    #[arg(long)]
    pub out: PathBuf,
    /// Render resolution (2d) / occupancy grid resolution (3d)
    #[arg(long)]
    pub res: Option<usize>,
    /// Surface points per mesh for 3-D metrics
    #[arg(long, default_value_t = 2048)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let generated = load_dataset(&args.generated)?;
    let reference = load_dataset(&args.reference)?;
    let report = match args.mode.as_str() {
        "2d" => evaluate_2d(&args, &generated.weights, &reference.weights)?,
        "3d" => evaluate_3d(&args, &generated.weights, &reference.weights)?,
        other => bail!("--mode must be 2d or 3d, got `{other}`"),
    };
    fs::write(&args.out, &report).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "evaluate: {} generated vs {} reference ({}), wrote {}",
        generated.weights.len(),
        reference.weights.len(),
        args.mode,
        args.out.display()
    );
    Ok(())
}

fn rms(a: &Tensor, b: &Tensor) -> f64 {
    let n = a.numel() as f64;
    (a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n).sqrt()
}

fn evaluate_2d(
    args: &EvaluateArgs,
    generated: &[weightforge_core::inr::WeightVector],
    reference: &[weightforge_core::inr::WeightVector],
) -> Result<String> {
    let res = args.res.unwrap_or(16);
    let gen_imgs: Vec<Tensor> =
        generated.iter().map(|w| render_image(w, res)).collect::<weightforge_core::Result<_>>()?;
    let ref_imgs: Vec<Tensor> =
        reference.iter().map(|w| render_image(w, res)).collect::<weightforge_core::Result<_>>()?;

    let mean_min_rms = gen_imgs
        .iter()
        .map(|g| ref_imgs.iter().map(|r| rms(g, r)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / gen_imgs.len() as f64;

    let mut out = String::new();
    out.push_str(&format!("note={SUBSTITUTION_NOTE}\n"));
    out.push_str("mode=2d\n");
    out.push_str(&format!("generated={}\n", gen_imgs.len()));
    out.push_str(&format!("reference={}\n", ref_imgs.len()));
    out.push_str(&format!("render_res={res}\n"));
    out.push_str(&format!("intra_diversity_generated={:.6}\n", intra_diversity(&gen_imgs)?));
    out.push_str(&format!("intra_diversity_reference={:.6}\n", intra_diversity(&ref_imgs)?));
    out.push_str(&format!("mean_min_rms={mean_min_rms:.6}\n"));
    Ok(out)
}

fn evaluate_3d(
    args: &EvaluateArgs,
    generated: &[weightforge_core::inr::WeightVector],
    reference: &[weightforge_core::inr::WeightVector],
) -> Result<String> {
    let res = args.res.unwrap_or(12);
    let seed = resolve_seed(args.seed)?;
    let clouds = |ws: &[weightforge_core::inr::WeightVector],
                      stream: u64|
     -> Result<(Vec<Tensor>, usize)> {
        let mut out = Vec::new();
        let mut empty = 0;
        for (i, w) in ws.iter().enumerate() {
            let mesh = render_mesh(w, res, 0.5)?;
            if mesh.is_empty() {
                empty += 1;
                continue;
            }
            out.push(sample_surface_points(&mesh, args.points, mix(mix(seed, stream), i as u64))?);
        }
        Ok((out, empty))
    };
    let (gen_clouds, gen_empty) = clouds(generated, 1)?;
    let (ref_clouds, ref_empty) = clouds(reference, 2)?;
    if gen_clouds.is_empty() || ref_clouds.is_empty() {
        bail!("all meshes on one side are empty; nothing to compare");
    }
    let (mmd, cov, one_nna) = mmd_cov_1nna(&gen_clouds, &ref_clouds)?;

    let mut out = String::new();
    out.push_str(&format!("note={SUBSTITUTION_NOTE}\n"));
    out.push_str("scale_note=chamfer-derived values are reported x100\n");
    out.push_str("mode=3d\n");
    out.push_str(&format!("generated={}\n", generated.len()));
    out.push_str(&format!("reference={}\n", reference.len()));
    out.push_str(&format!("grid_res={res}\n"));
    out.push_str(&format!("points={}\n", args.points));
    out.push_str(&format!("empty_generated={gen_empty}\n"));
    out.push_str(&format!("empty_reference={ref_empty}\n"));
    out.push_str(&format!("mmd_x100={:.6}\n", mmd * 100.0));
    out.push_str(&format!("cov_percent={cov:.6}\n"));
    out.push_str(&format!("one_nna_percent={one_nna:.6}\n"));
    Ok(out)
}
