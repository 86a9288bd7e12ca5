//! Hidden-neuron permutation symmetry: group actions on weight vectors,
//! total variation of neuron orderings, and the smooth augmentation that
//! canonicalizes an ordering by (approximately) solving one Shortest
//! Hamiltonian Path per hidden layer with greedy construction + 2.5-opt.

use crate::error::{Error, Result};
use crate::inr::{evaluate, flatten, MlpArchitecture, Tag, WeightVector};
use crate::rng::rng_stream;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;

/// Per-hidden-layer neuron permutations. `perms[h][i]` is the source index
/// that lands at position `i`: acting gathers rows of W_h, entries of b_h,
/// and columns of W_{h+1} by the same array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationPlan {
    pub perms: Vec<Vec<usize>>,
}

impl PermutationPlan {
    pub fn identity(arch: &MlpArchitecture) -> Self {
        PermutationPlan {
            perms: arch.hidden_widths().iter().map(|&w| (0..w).collect()).collect(),
        }
    }

    pub fn random(arch: &MlpArchitecture, seed: u64) -> Self {
        let perms = arch
            .hidden_widths()
            .iter()
            .enumerate()
            .map(|(h, &w)| {
                let mut p: Vec<usize> = (0..w).collect();
                p.shuffle(&mut rng_stream(seed, h as u64));
                p
            })
            .collect();
        PermutationPlan { perms }
    }

    pub fn validate(&self, arch: &MlpArchitecture) -> Result<()> {
        let widths = arch.hidden_widths();
        if self.perms.len() != widths.len() {
            return Err(Error::Plan(format!(
                "{} permutations for {} hidden layers",
                self.perms.len(),
                widths.len()
            )));
        }
        for (h, (p, &w)) in self.perms.iter().zip(widths).enumerate() {
            if p.len() != w {
                return Err(Error::Plan(format!("axis {h}: length {} != width {w}", p.len())));
            }
            let mut seen = vec![false; w];
            for &i in p {
                if i >= w || seen[i] {
                    return Err(Error::Plan(format!("axis {h} is not a bijection")));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.perms.iter().all(|p| p.iter().enumerate().all(|(i, &v)| i == v))
    }

    pub fn inverse(&self) -> Self {
        let perms = self
            .perms
            .iter()
            .map(|p| {
                let mut inv = vec![0; p.len()];
                for (i, &v) in p.iter().enumerate() {
                    inv[v] = i;
                }
                inv
            })
            .collect();
        PermutationPlan { perms }
    }

    /// Plan equal to applying `first`, then `self`.
    pub fn after(&self, first: &PermutationPlan) -> Self {
        let perms = self
            .perms
            .iter()
            .zip(&first.perms)
            .map(|(second, first)| second.iter().map(|&i| first[i]).collect())
            .collect();
        PermutationPlan { perms }
    }
}

/// Which flat blocks each hidden axis permutes: rows of W_h, all of b_h,
/// and columns of W_{h+1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    pub axes: Vec<AxisBlocks>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxisBlocks {
    pub width: usize,
    pub row_layer: usize,
    pub bias_layer: usize,
    pub col_layer: usize,
}

impl DependencyGraph {
    pub fn from_arch(arch: &MlpArchitecture) -> Self {
        let axes = arch
            .hidden_widths()
            .iter()
            .enumerate()
            .map(|(h, &width)| AxisBlocks {
                width,
                row_layer: h,
                bias_layer: h,
                col_layer: h + 1,
            })
            .collect();
        DependencyGraph { axes }
    }
}

/// Apply a permutation plan; the represented function is preserved.
pub fn act(plan: &PermutationPlan, w: &WeightVector) -> Result<WeightVector> {
    plan.validate(&w.arch)?;
    let mut layers = w.layers();
    for (h, p) in plan.perms.iter().enumerate() {
        let (wm, bm) = &layers[h];
        let (rows, cols) = (wm.shape()[0], wm.shape()[1]);
        let mut new_w = vec![0.0; rows * cols];
        let mut new_b = vec![0.0; rows];
        for (dst, &src) in p.iter().enumerate() {
            new_w[dst * cols..(dst + 1) * cols]
                .copy_from_slice(&wm.data()[src * cols..(src + 1) * cols]);
            new_b[dst] = bm.data()[src];
        }
        layers[h] = (Tensor::new(vec![rows, cols], new_w)?, Tensor::new(vec![rows], new_b)?);

        let (wn, bn) = &layers[h + 1];
        let (nrows, ncols) = (wn.shape()[0], wn.shape()[1]);
        let mut new_wn = vec![0.0; nrows * ncols];
        for r in 0..nrows {
            let row = &wn.data()[r * ncols..(r + 1) * ncols];
            for (dst, &src) in p.iter().enumerate() {
                new_wn[r * ncols + dst] = row[src];
            }
        }
        layers[h + 1] = (Tensor::new(vec![nrows, ncols], new_wn)?, bn.clone());
    }
    let mut out = flatten(&w.arch, &layers, w.tag)?;
    out.class_label = w.class_label.clone();
    Ok(out)
}

/// Parameter signature of each neuron on one hidden axis: incoming row,
/// bias entry, outgoing column, concatenated.
pub fn signatures(w: &WeightVector, axis: usize) -> Vec<Vec<f64>> {
    let layers = w.layers();
    let (wm, bm) = &layers[axis];
    let (wn, _) = &layers[axis + 1];
    let (rows, cols) = (wm.shape()[0], wm.shape()[1]);
    let (nrows, ncols) = (wn.shape()[0], wn.shape()[1]);
    (0..rows)
        .map(|i| {
            let mut sig = Vec::with_capacity(cols + 1 + nrows);
            sig.extend_from_slice(&wm.data()[i * cols..(i + 1) * cols]);
            sig.push(bm.data()[i]);
            for r in 0..nrows {
                sig.push(wn.data()[r * ncols + i]);
            }
            sig
        })
        .collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Total variation: adjacent-neuron L1 signature differences, summed over
/// every hidden axis.
pub fn total_variation(w: &WeightVector) -> f64 {
    let graph = DependencyGraph::from_arch(&w.arch);
    let mut tv = 0.0;
    for (axis, blocks) in graph.axes.iter().enumerate() {
        let sigs = signatures(w, axis);
        debug_assert_eq!(sigs.len(), blocks.width);
        for pair in sigs.windows(2) {
            tv += l1(&pair[0], &pair[1]);
        }
    }
    tv
}

fn path_cost(order: &[usize], dist: &[Vec<f64>]) -> f64 {
    order.windows(2).map(|p| dist[p[0]][p[1]]).sum()
}

fn greedy_path(start: usize, dist: &[Vec<f64>]) -> Vec<usize> {
    let n = dist.len();
    let mut used = vec![false; n];
    let mut path = Vec::with_capacity(n);
    let mut at = start;
    used[at] = true;
    path.push(at);
    for _ in 1..n {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (j, &u) in used.iter().enumerate() {
            if !u && dist[at][j] < best_d {
                best_d = dist[at][j];
                best = j;
            }
        }
        used[best] = true;
        path.push(best);
        at = best;
    }
    path
}

/// 2-opt segment reversals + or-opt single-node relocations,
/// first-improvement, iterated to a local optimum.
fn two_and_a_half_opt(path: &mut Vec<usize>, dist: &[Vec<f64>]) {
    let n = path.len();
    if n < 3 {
        return;
    }
    let eps = 1e-12;
    loop {
        let mut improved = false;
        // 2-opt: reverse path[i..=j]
        for i in 0..n - 1 {
            for j in i + 1..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let mut delta = 0.0;
                if i > 0 {
                    delta += dist[path[i - 1]][path[j]] - dist[path[i - 1]][path[i]];
                }
                if j < n - 1 {
                    delta += dist[path[i]][path[j + 1]] - dist[path[j]][path[j + 1]];
                }
                if delta < -eps {
                    path[i..=j].reverse();
                    improved = true;
                }
            }
        }
        // or-opt(1): relocate path[i] to some other position
        for i in 0..n {
            let node = path[i];
            let mut removal = 0.0;
            if i > 0 {
                removal += dist[path[i - 1]][node];
            }
            if i < n - 1 {
                removal += dist[node][path[i + 1]];
            }
            if i > 0 && i < n - 1 {
                removal -= dist[path[i - 1]][path[i + 1]];
            }
            // reduced path (node removed) indexed without allocating
            let red = |q: usize| if q < i { path[q] } else { path[q + 1] };
            let m = n - 1;
            for k in 0..=m {
                if k == i {
                    continue; // reproduces the original path
                }
                let before = (k > 0).then(|| red(k - 1));
                let after = (k < m).then(|| red(k));
                let mut insertion = 0.0;
                if let Some(b) = before {
                    insertion += dist[b][node];
                }
                if let Some(a) = after {
                    insertion += dist[node][a];
                }
                if let (Some(b), Some(a)) = (before, after) {
                    insertion -= dist[b][a];
                }
                if insertion - removal < -eps {
                    path.remove(i);
                    path.insert(k, node);
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

fn canonical_orientation(path: &[usize]) -> Vec<usize> {
    let rev: Vec<usize> = path.iter().rev().copied().collect();
    if rev.as_slice() < path {
        rev
    } else {
        path.to_vec()
    }
}

/// Minimize TV by re-ordering each hidden axis independently; returns the
/// smoothed weights and the permutation that produced them. TV never
/// increases — the incumbent ordering is always a candidate.
pub fn smooth(w: &WeightVector, restarts: usize, seed: u64) -> Result<(WeightVector, PermutationPlan)> {
    if restarts == 0 {
        return Err(Error::contract("smooth requires restarts >= 1"));
    }
    let mut plan = PermutationPlan::identity(&w.arch);
    for (axis, width) in w.arch.hidden_widths().iter().copied().enumerate() {
        if width == 1 {
            continue;
        }
        let sigs = signatures(w, axis);
        let dist: Vec<Vec<f64>> =
            (0..width).map(|i| (0..width).map(|j| l1(&sigs[i], &sigs[j])).collect()).collect();

        // narrow layers are cheap enough to try every start node
        let mut starts: Vec<usize> = (0..width).collect();
        if restarts < width && width > 8 {
            starts.shuffle(&mut rng_stream(seed, axis as u64));
            starts.truncate(restarts);
            starts.sort_unstable();
        }

        let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(starts.len() + 1);
        candidates.push((0..width).collect());
        for &s in &starts {
            candidates.push(greedy_path(s, &dist));
        }

        let mut best: Option<(f64, Vec<usize>)> = None;
        for mut cand in candidates {
            two_and_a_half_opt(&mut cand, &dist);
            let cost = path_cost(&cand, &dist);
            let oriented = canonical_orientation(&cand);
            best = match best {
                None => Some((cost, oriented)),
                Some((bc, bp)) => {
                    if cost < bc || (cost == bc && oriented < bp) {
                        Some((cost, oriented))
                    } else {
                        Some((bc, bp))
                    }
                }
            };
        }
        plan.perms[axis] = best.unwrap().1;
    }
    let mut smoothed = act(&plan, w)?;
    smoothed.tag = Tag::Smoothed;
    Ok((smoothed, plan))
}

/// True iff Φ(w1) and Φ(w2) agree within `tol` on every probe coordinate.
pub fn functionally_equivalent(
    w1: &WeightVector,
    w2: &WeightVector,
    probe_coords: &Tensor,
    tol: f64,
) -> Result<bool> {
    if w1.arch != w2.arch {
        return Err(Error::contract("functional equivalence requires matching architectures"));
    }
    Ok(max_deviation(w1, w2, probe_coords)? <= tol)
}

/// Max |Φ(w1)(x) − Φ(w2)(x)| over probes.
pub fn max_deviation(w1: &WeightVector, w2: &WeightVector, probe_coords: &Tensor) -> Result<f64> {
    let a = evaluate(w1, probe_coords)?;
    let b = evaluate(w2, probe_coords)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}
