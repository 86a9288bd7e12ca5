//! Evaluation metrics: reconstruction distance in signal space, Chamfer
//! distance between point sets, the MMD / COV / 1-NNA suite over set lists,
//! pixel-space intra-set diversity, and surface point sampling to bridge
//! meshes into the point-cloud metrics.
//!
//! Chamfer uses squared Euclidean distances throughout; the conventional
//! ×10² scaling is applied by report writers only, never here.

use crate::error::{Error, Result};
use crate::inr::{evaluate, SignalSample, WeightVector};
use crate::mesh::Mesh;
use crate::rng::rng_stream;
use crate::tensor::Tensor;
use rand::Rng;

/// RMS error of Φ(w) against a sampled signal (Monte-Carlo estimate of the
/// expected squared deviation, square-rooted).
pub fn reconstruction_distance(w: &WeightVector, signal: &SignalSample) -> Result<f64> {
    let out = evaluate(w, &signal.coords)?;
    if out.shape() != signal.targets.shape() {
        return Err(Error::dimension(format!(
            "signal outputs {:?} vs INR outputs {:?}",
            signal.targets.shape(),
            out.shape()
        )));
    }
    let n = out.numel() as f64;
    let mse = out
        .data()
        .iter()
        .zip(signal.targets.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok(mse.sqrt())
}

/// Validity per the ε-tolerance membership rule: the weights represent the
/// signal if their reconstruction distance is within `eps`.
pub fn is_valid_member(w: &WeightVector, signal: &SignalSample, eps: f64) -> Result<bool> {
    Ok(reconstruction_distance(w, signal)? <= eps)
}

fn check_points(p: &Tensor, name: &str) -> Result<()> {
    if p.shape().len() != 2 || p.shape()[0] == 0 {
        return Err(Error::contract(format!("{name} must be a non-empty [n, d] point set")));
    }
    Ok(())
}

fn min_sq_dist(point: &[f64], set: &Tensor) -> f64 {
    let d = set.shape()[1];
    set.data()
        .chunks(d)
        .map(|q| point.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Bidirectional mean of squared nearest-neighbor distances.
pub fn chamfer(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_points(a, "chamfer A")?;
    check_points(b, "chamfer B")?;
    if a.shape()[1] != b.shape()[1] {
        return Err(Error::dimension("point sets have different widths"));
    }
    let d = a.shape()[1];
    let ab = a.data().chunks(d).map(|p| min_sq_dist(p, b)).sum::<f64>() / a.shape()[0] as f64;
    let ba = b.data().chunks(d).map(|p| min_sq_dist(p, a)).sum::<f64>() / b.shape()[0] as f64;
    Ok(ab + ba)
}

/// MMD, coverage (percent), and 1-NN accuracy (percent) of generated point
/// sets against a reference list, all under the Chamfer metric.
///
/// 1-NNA conventions: leave-one-out on the union; zero-distance neighbors
/// are excluded as duplicates of the query; ties at the minimum distance
/// split fractionally between labels. On two identical lists this yields
/// exactly 50.0.
pub fn mmd_cov_1nna(
    generated: &[Tensor],
    reference: &[Tensor],
) -> Result<(f64, f64, f64)> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::contract("mmd_cov_1nna needs non-empty lists"));
    }
    let (ng, nr) = (generated.len(), reference.len());
    if ng + nr < 2 {
        return Err(Error::contract("1-NNA undefined on a singleton union"));
    }
    // cross[i][j] = chamfer(generated[i], reference[j])
    let mut cross = vec![vec![0.0; nr]; ng];
    for (i, g) in generated.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            cross[i][j] = chamfer(g, r)?;
        }
    }

    let mmd = (0..nr)
        .map(|j| (0..ng).map(|i| cross[i][j]).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / nr as f64;

    let mut covered = vec![false; nr];
    for row in &cross {
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v < row[best] {
                best = j;
            }
        }
        covered[best] = true;
    }
    let cov = covered.iter().filter(|&&c| c).count() as f64 * 100.0 / nr as f64;

    // union with labels: true = generated
    let union: Vec<(&Tensor, bool)> = generated
        .iter()
        .map(|t| (t, true))
        .chain(reference.iter().map(|t| (t, false)))
        .collect();
    let n = union.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = if union[i].1 && !union[j].1 {
                cross[i][j - ng]
            } else if !union[i].1 && union[j].1 {
                cross[j][i - ng]
            } else {
                chamfer(union[i].0, union[j].0)?
            };
            dist[i][j] = v;
            dist[j][i] = v;
        }
    }
    let mut correct = 0.0;
    for i in 0..n {
        let mut dmin = f64::INFINITY;
        for j in 0..n {
            if j != i && dist[i][j] > 0.0 {
                dmin = dmin.min(dist[i][j]);
            }
        }
        if dmin == f64::INFINITY {
            // every other element is a duplicate: indistinguishable
            correct += 0.5;
            continue;
        }
        let (mut same, mut diff) = (0usize, 0usize);
        for j in 0..n {
            if j != i && dist[i][j] == dmin {
                if union[j].1 == union[i].1 {
                    same += 1;
                } else {
                    diff += 1;
                }
            }
        }
        correct += same as f64 / (same + diff) as f64;
    }
    let one_nna = correct * 100.0 / n as f64;
    Ok((mmd, cov, one_nna))
}

/// Mean pairwise RMS pixel difference over unordered pairs.
pub fn intra_diversity(images: &[Tensor]) -> Result<f64> {
    if images.len() < 2 {
        return Err(Error::contract("intra_diversity needs at least two images"));
    }
    for img in images {
        if img.shape() != images[0].shape() {
            return Err(Error::dimension("intra_diversity images must share a shape"));
        }
    }
    let mut total = 0.0;
    let mut pairs = 0.0;
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            let mse = images[i]
                .data()
                .iter()
                .zip(images[j].data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / images[i].numel() as f64;
            total += mse.sqrt();
            pairs += 1.0;
        }
    }
    Ok(total / pairs)
}

/// Area-weighted uniform sampling of `n` points on the mesh surface.
pub fn sample_surface_points(mesh: &Mesh, n: usize, seed: u64) -> Result<Tensor> {
    if mesh.is_empty() {
        return Err(Error::contract("cannot sample points from an empty mesh"));
    }
    let areas: Vec<f64> = (0..mesh.triangles.len()).map(|t| mesh.triangle_area(t)).collect();
    let total: f64 = areas.iter().sum();
    if total <= 0.0 {
        return Err(Error::contract("mesh has zero total area"));
    }
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cdf.push(acc);
    }
    let mut rng = rng_stream(seed, 0x5A3);
    let mut data = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let u = rng.random_range(0.0..total);
        let t = cdf.partition_point(|&c| c < u).min(areas.len() - 1);
        let [ia, ib, ic] = mesh.triangles[t];
        let (a, b, c) = (mesh.vertices[ia], mesh.vertices[ib], mesh.vertices[ic]);
        let (r1, r2): (f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        for k in 0..3 {
            data.push(wa * a[k] + wb * b[k] + wc * c[k]);
        }
    }
    Tensor::new(vec![n, 3], data)
}
