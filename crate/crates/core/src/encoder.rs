//! Permutation-equivariant weight-space encoder.
//!
//! Weights are lifted to per-layer feature blocks (U_m, V_m) with a channel
//! axis. Each equivariant layer rebuilds every block from the permutation-
//! compatible linear terms available to it — identity, pools over each axis,
//! broadcasts of the bias features, pooled summaries of the neighboring
//! layers, a global context channel, and a per-channel bias — every term a
//! pointwise map on channels. Equivariance holds by construction: each term
//! either commutes with the axis permutations or is constant along them.
//! A final head pools the permuted axes only (input and output axes stay),
//! concatenates, and maps to the ℝ¹²⁸ feature ψ.

use crate::augment::{random_augmentation, AugmentPolicy};
use crate::error::{Error, Result};
use crate::inr::{MlpArchitecture, WeightVector};
use crate::optim::AdamW;
use crate::rng::{mix, rng_stream};
use crate::symmetry::{smooth, PermutationPlan};
use crate::tensor::{Tape, Tensor, Var};
use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// channels per feature block in the hidden equivariant layers
    pub channels: usize,
    /// number of hidden equivariant layers
    pub layers: usize,
    /// dimension of ψ
    pub feature_dim: usize,
    /// width of the head's hidden dense layer
    pub head_hidden: usize,
    /// NT-Xent temperature
    pub tau: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { channels: 16, layers: 4, feature_dim: 128, head_hidden: 128, tau: 0.5 }
    }
}

/// ψ and friends (ψ̄, ψ̂, ψ′) — a plain feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivariantFeature {
    pub psi: Vec<f64>,
}

impl EquivariantFeature {
    pub fn cosine(&self, other: &EquivariantFeature) -> f64 {
        let dot: f64 = self.psi.iter().zip(&other.psi).map(|(a, b)| a * b).sum();
        let na: f64 = self.psi.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb: f64 = other.psi.iter().map(|b| b * b).sum::<f64>().sqrt();
        dot / (na * nb).max(1e-12)
    }

    pub fn is_finite(&self) -> bool {
        self.psi.iter().all(|v| v.is_finite())
    }
}

/// Per-layer feature blocks: U [C, rows, cols] and V [C, rows].
#[derive(Debug, Clone)]
pub struct FeatureStack {
    pub blocks: Vec<(Tensor, Tensor)>,
}

impl FeatureStack {
    /// Lift a weight vector to single-channel features.
    pub fn lift(w: &WeightVector) -> Self {
        let blocks = w
            .layers()
            .into_iter()
            .map(|(wm, bm)| {
                let (r, c) = (wm.shape()[0], wm.shape()[1]);
                (
                    wm.reshaped(vec![1, r, c]).unwrap(),
                    bm.reshaped(vec![1, r]).unwrap(),
                )
            })
            .collect();
        FeatureStack { blocks }
    }

    /// ρ(g): permute the hidden axes of a feature stack, mirroring
    /// symmetry::act on the channel-lifted blocks.
    pub fn permute(&self, plan: &PermutationPlan) -> FeatureStack {
        let mut blocks = self.blocks.clone();
        for (h, p) in plan.perms.iter().enumerate() {
            let (u, v) = &blocks[h];
            let (ch, r, c) = (u.shape()[0], u.shape()[1], u.shape()[2]);
            let mut nu = vec![0.0; ch * r * c];
            let mut nv = vec![0.0; ch * r];
            for cc in 0..ch {
                for (dst, &src) in p.iter().enumerate() {
                    nu[(cc * r + dst) * c..(cc * r + dst + 1) * c]
                        .copy_from_slice(&u.data()[(cc * r + src) * c..(cc * r + src + 1) * c]);
                    nv[cc * r + dst] = v.data()[cc * r + src];
                }
            }
            blocks[h] = (
                Tensor::new(vec![ch, r, c], nu).unwrap(),
                Tensor::new(vec![ch, r], nv).unwrap(),
            );

            let (u, v) = &blocks[h + 1];
            let (ch, r, c) = (u.shape()[0], u.shape()[1], u.shape()[2]);
            let mut nu = vec![0.0; ch * r * c];
            for cc in 0..ch {
                for rr in 0..r {
                    let row = &u.data()[(cc * r + rr) * c..(cc * r + rr + 1) * c];
                    for (dst, &src) in p.iter().enumerate() {
                        nu[(cc * r + rr) * c + dst] = row[src];
                    }
                }
            }
            blocks[h + 1] = (Tensor::new(vec![ch, r, c], nu).unwrap(), v.clone());
        }
        FeatureStack { blocks }
    }
}

// ── parameter structure, generic over the holder so the same shape works
//    for stored tensors and for tape variables ────────────────────────────

#[derive(Debug, Clone)]
pub struct UTermParams<T> {
    pub id_map: T,
    pub row_pool: T,
    pub col_pool: T,
    pub both_pool: T,
    pub from_v: T,
    pub from_prev_v: Option<T>,
    pub from_next_rowpool: Option<T>,
    pub from_prev_colpool: Option<T>,
    pub global: T,
    pub bias: T,
}

#[derive(Debug, Clone)]
pub struct VTermParams<T> {
    pub id_map: T,
    pub pool: T,
    pub from_u_colpool: T,
    pub from_next_rowpool: Option<T>,
    pub global: T,
    pub bias: T,
}

#[derive(Debug, Clone)]
pub struct EquivariantLayerParams<T> {
    pub u: Vec<UTermParams<T>>,
    pub v: Vec<VTermParams<T>>,
}

#[derive(Debug, Clone)]
pub struct HeadParams<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Debug, Clone)]
pub struct EncoderParams<T> {
    pub layers: Vec<EquivariantLayerParams<T>>,
    pub head: HeadParams<T>,
}

impl<T> EncoderParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> EncoderParams<U> {
        EncoderParams {
            layers: self
                .layers
                .iter()
                .map(|l| EquivariantLayerParams {
                    u: l.u
                        .iter()
                        .map(|t| UTermParams {
                            id_map: f(&t.id_map),
                            row_pool: f(&t.row_pool),
                            col_pool: f(&t.col_pool),
                            both_pool: f(&t.both_pool),
                            from_v: f(&t.from_v),
                            from_prev_v: t.from_prev_v.as_ref().map(&mut f),
                            from_next_rowpool: t.from_next_rowpool.as_ref().map(&mut f),
                            from_prev_colpool: t.from_prev_colpool.as_ref().map(&mut f),
                            global: f(&t.global),
                            bias: f(&t.bias),
                        })
                        .collect(),
                    v: l.v
                        .iter()
                        .map(|t| VTermParams {
                            id_map: f(&t.id_map),
                            pool: f(&t.pool),
                            from_u_colpool: f(&t.from_u_colpool),
                            from_next_rowpool: t.from_next_rowpool.as_ref().map(&mut f),
                            global: f(&t.global),
                            bias: f(&t.bias),
                        })
                        .collect(),
                })
                .collect(),
            head: HeadParams {
                w1: f(&self.head.w1),
                b1: f(&self.head.b1),
                w2: f(&self.head.w2),
                b2: f(&self.head.b2),
            },
        }
    }

    pub fn flat(&self) -> Vec<&T> {
        let mut out = Vec::new();
        for l in &self.layers {
            for t in &l.u {
                out.extend([&t.id_map, &t.row_pool, &t.col_pool, &t.both_pool, &t.from_v]);
                out.extend(t.from_prev_v.iter());
                out.extend(t.from_next_rowpool.iter());
                out.extend(t.from_prev_colpool.iter());
                out.extend([&t.global, &t.bias]);
            }
            for t in &l.v {
                out.extend([&t.id_map, &t.pool, &t.from_u_colpool]);
                out.extend(t.from_next_rowpool.iter());
                out.extend([&t.global, &t.bias]);
            }
        }
        out.extend([&self.head.w1, &self.head.b1, &self.head.w2, &self.head.b2]);
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            for t in &mut l.u {
                out.extend([
                    &mut t.id_map,
                    &mut t.row_pool,
                    &mut t.col_pool,
                    &mut t.both_pool,
                    &mut t.from_v,
                ]);
                out.extend(t.from_prev_v.iter_mut());
                out.extend(t.from_next_rowpool.iter_mut());
                out.extend(t.from_prev_colpool.iter_mut());
                out.extend([&mut t.global, &mut t.bias]);
            }
            for t in &mut l.v {
                out.extend([&mut t.id_map, &mut t.pool, &mut t.from_u_colpool]);
                out.extend(t.from_next_rowpool.iter_mut());
                out.extend([&mut t.global, &mut t.bias]);
            }
        }
        out.extend([
            &mut self.head.w1,
            &mut self.head.b1,
            &mut self.head.w2,
            &mut self.head.b2,
        ]);
        out
    }
}

#[derive(Debug, Clone)]
pub struct EquivariantEncoder {
    pub arch: MlpArchitecture,
    pub config: EncoderConfig,
    pub params: EncoderParams<Tensor>,
}

/// Width of the concatenated pooled summary entering the head.
fn head_input_dim(arch: &MlpArchitecture, channels: usize) -> usize {
    let shapes = arch.layer_shapes();
    let m = shapes.len();
    let mut d = 0;
    for (i, &(rows, cols)) in shapes.iter().enumerate() {
        d += match i {
            0 => channels * cols,                  // input axis kept
            _ if i == m - 1 => channels * rows,    // output axis kept
            _ => channels,
        };
        d += if i == m - 1 { channels * rows } else { channels };
    }
    d
}

impl EquivariantEncoder {
    pub fn new(arch: &MlpArchitecture, config: &EncoderConfig, seed: u64) -> Self {
        let m = arch.num_layers();
        let mut counter = 0u64;
        let mut dense = |c_out: usize, c_in: usize| -> Tensor {
            counter += 1;
            let mut rng = rng_stream(mix(seed, 0xE4C0), counter);
            // the ~13 summed terms share responsibility for output scale
            let bound = (6.0 / (c_in as f64 * 13.0)).sqrt();
            Tensor::rand_uniform(&[c_out, c_in], -bound, bound, &mut rng)
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let c_in = if l == 0 { 1 } else { config.channels };
            let c_out = config.channels;
            let u = (0..m)
                .map(|i| UTermParams {
                    id_map: dense(c_out, c_in),
                    row_pool: dense(c_out, c_in),
                    col_pool: dense(c_out, c_in),
                    both_pool: dense(c_out, c_in),
                    from_v: dense(c_out, c_in),
                    from_prev_v: (i > 0).then(|| dense(c_out, c_in)),
                    from_next_rowpool: (i + 1 < m).then(|| dense(c_out, c_in)),
                    from_prev_colpool: (i > 0).then(|| dense(c_out, c_in)),
                    global: dense(c_out, c_in),
                    bias: Tensor::zeros(&[c_out]),
                })
                .collect();
            let v = (0..m)
                .map(|i| VTermParams {
                    id_map: dense(c_out, c_in),
                    pool: dense(c_out, c_in),
                    from_u_colpool: dense(c_out, c_in),
                    from_next_rowpool: (i + 1 < m).then(|| dense(c_out, c_in)),
                    global: dense(c_out, c_in),
                    bias: Tensor::zeros(&[c_out]),
                })
                .collect();
            layers.push(EquivariantLayerParams { u, v });
        }
        let d = head_input_dim(arch, config.channels);
        let head = HeadParams {
            w1: dense(config.head_hidden, d),
            b1: Tensor::zeros(&[config.head_hidden]),
            w2: dense(config.feature_dim, config.head_hidden),
            b2: Tensor::zeros(&[config.feature_dim]),
        };
        EquivariantEncoder { arch: arch.clone(), config: config.clone(), params: EncoderParams { layers, head } }
    }

    /// ψ = E_φ(w). Deterministic; invariant to hidden-axis permutations.
    pub fn encode(&self, w: &WeightVector) -> Result<EquivariantFeature> {
        if w.arch != self.arch {
            return Err(Error::contract("encoder was built for a different architecture"));
        }
        let mut tape = Tape::new();
        let vars = self.params.map(|t| tape.leaf(t.clone(), false));
        let feats = lift_on_tape(&mut tape, w);
        let psi = encode_on_tape(&mut tape, &vars, &feats, &self.config)?;
        Ok(EquivariantFeature { psi: tape.value(psi).data().to_vec() })
    }
}

pub fn lift_on_tape(tape: &mut Tape, w: &WeightVector) -> Vec<(Var, Var)> {
    FeatureStack::lift(w)
        .blocks
        .into_iter()
        .map(|(u, v)| (tape.constant(u), tape.constant(v)))
        .collect()
}

/// Lift a flattened weight vector that lives on the tape (shape [1, d])
/// into per-layer single-channel blocks, keeping it differentiable.
pub fn lift_var_on_tape(
    tape: &mut Tape,
    arch: &MlpArchitecture,
    w: Var,
) -> Result<Vec<(Var, Var)>> {
    let shape = tape.shape(w).to_vec();
    if shape.len() != 2 || shape[0] != 1 || shape[1] != arch.param_count() {
        return Err(Error::dimension(format!(
            "expected [1, {}] weight vector on tape, got {:?}",
            arch.param_count(),
            shape
        )));
    }
    let mut blocks = Vec::new();
    for ((wr, br), (o, i)) in arch.block_ranges().into_iter().zip(arch.layer_shapes()) {
        let ws = tape.slice(w, 1, wr.start, wr.len())?;
        let u = tape.reshape(ws, &[1, o, i])?;
        let bs = tape.slice(w, 1, br.start, br.len())?;
        let v = tape.reshape(bs, &[1, o])?;
        blocks.push((u, v));
    }
    Ok(blocks)
}

fn feats_on_tape(tape: &mut Tape, f: &FeatureStack) -> Vec<(Var, Var)> {
    f.blocks
        .iter()
        .map(|(u, v)| (tape.constant(u.clone()), tape.constant(v.clone())))
        .collect()
}

/// dense map over the channel axis of [C_in, a, b] or [C_in, a]
fn channel_dense(tape: &mut Tape, w: Var, x: Var) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    if xs.len() == 2 {
        return tape.matmul(w, x);
    }
    let (c_in, a, b) = (xs[0], xs[1], xs[2]);
    let flat = tape.reshape(x, &[c_in, a * b])?;
    let y = tape.matmul(w, flat)?;
    let c_out = tape.shape(y)[0];
    tape.reshape(y, &[c_out, a, b])
}

/// One equivariant layer on the tape: every block of the output stack is a
/// sum of channel-dense maps of permutation-compatible views of the input.
pub fn layer_apply_on_tape(
    tape: &mut Tape,
    layer: &EquivariantLayerParams<Var>,
    feats: &[(Var, Var)],
) -> Result<Vec<(Var, Var)>> {
    let m = feats.len();
    if layer.u.len() != m {
        return Err(Error::contract("layer parameter count does not match feature blocks"));
    }
    let c_out = tape.shape(layer.u[0].id_map)[0];

    // global context: average of all per-channel block means
    let mut global: Option<Var> = None;
    for &(u, v) in feats {
        let up = tape.mean_axis(u, 1)?;
        let up = tape.mean_axis(up, 2)?; // [C,1,1]
        let vp = tape.mean_axis(v, 1)?; // [C,1]
        let c = tape.shape(vp)[0];
        let vp = tape.reshape(vp, &[c, 1, 1])?;
        let s = tape.add(up, vp)?;
        global = Some(match global {
            None => s,
            Some(g) => tape.add(g, s)?,
        });
    }
    let global = tape.scale(global.unwrap(), 1.0 / (2.0 * m as f64));

    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let (u, v) = feats[i];
        let us = tape.shape(u).to_vec();
        let (r, c) = (us[1], us[2]);
        let tu = &layer.u[i];

        let mut acc = channel_dense(tape, tu.id_map, u)?;
        let push = |tape: &mut Tape, acc: Var, term: Var| -> Result<Var> {
            let b = tape.broadcast_to(term, &[c_out, r, c])?;
            tape.add(acc, b)
        };

        let rp = tape.mean_axis(u, 1)?; // [C,1,c]
        let t = channel_dense(tape, tu.row_pool, rp)?;
        acc = push(tape, acc, t)?;

        let cp = tape.mean_axis(u, 2)?; // [C,r,1]
        let t = channel_dense(tape, tu.col_pool, cp)?;
        acc = push(tape, acc, t)?;

        let bp = tape.mean_axis(rp, 2)?; // [C,1,1]
        let t = channel_dense(tape, tu.both_pool, bp)?;
        acc = push(tape, acc, t)?;

        let c_in = tape.shape(v)[0];
        let vcol = tape.reshape(v, &[c_in, r, 1])?;
        let t = channel_dense(tape, tu.from_v, vcol)?;
        acc = push(tape, acc, t)?;

        if let Some(p) = tu.from_prev_v {
            let vprev = feats[i - 1].1; // [C, c]
            let vrow = tape.reshape(vprev, &[c_in, 1, c])?;
            let t = channel_dense(tape, p, vrow)?;
            acc = push(tape, acc, t)?;
        }
        if let Some(p) = tu.from_next_rowpool {
            let unext = feats[i + 1].0; // [C, r_next, r]
            let nrp = tape.mean_axis(unext, 1)?; // [C,1,r]
            let nrp = tape.reshape(nrp, &[c_in, r, 1])?;
            let t = channel_dense(tape, p, nrp)?;
            acc = push(tape, acc, t)?;
        }
        if let Some(p) = tu.from_prev_colpool {
            let uprev = feats[i - 1].0; // [C, c, c_prev]
            let pcp = tape.mean_axis(uprev, 2)?; // [C,c,1]
            let pcp = tape.reshape(pcp, &[c_in, 1, c])?;
            let t = channel_dense(tape, p, pcp)?;
            acc = push(tape, acc, t)?;
        }
        let t = channel_dense(tape, tu.global, global)?;
        acc = push(tape, acc, t)?;
        let bias = tape.reshape(tu.bias, &[c_out, 1, 1])?;
        acc = push(tape, acc, bias)?;
        let u_out = acc;

        let tv = &layer.v[i];
        let mut acc = tape.matmul(tv.id_map, v)?; // [C_out, r]
        let push2 = |tape: &mut Tape, acc: Var, term: Var| -> Result<Var> {
            let b = tape.broadcast_to(term, &[c_out, r])?;
            tape.add(acc, b)
        };
        let vp = tape.mean_axis(v, 1)?; // [C,1]
        let t = tape.matmul(tv.pool, vp)?;
        acc = push2(tape, acc, t)?;

        let ucp = tape.mean_axis(u, 2)?; // [C,r,1]
        let ucp = tape.reshape(ucp, &[c_in, r])?;
        let t = tape.matmul(tv.from_u_colpool, ucp)?;
        acc = tape.add(acc, t)?;

        if let Some(p) = tv.from_next_rowpool {
            let unext = feats[i + 1].0;
            let nrp = tape.mean_axis(unext, 1)?;
            let nrp = tape.reshape(nrp, &[c_in, r])?;
            let t = tape.matmul(p, nrp)?;
            acc = tape.add(acc, t)?;
        }
        let g2 = tape.reshape(global, &[c_in, 1])?;
        let t = tape.matmul(tv.global, g2)?;
        acc = push2(tape, acc, t)?;
        let bias = tape.reshape(tv.bias, &[c_out, 1])?;
        acc = push2(tape, acc, bias)?;

        out.push((u_out, acc));
    }
    Ok(out)
}

/// Invariant pooling head: pool permuted axes, keep the input/output axes,
/// concatenate, then a two-layer dense map to ψ.
fn head_on_tape(
    tape: &mut Tape,
    head: &HeadParams<Var>,
    feats: &[(Var, Var)],
) -> Result<Var> {
    let m = feats.len();
    let mut pieces = Vec::new();
    for (i, &(u, v)) in feats.iter().enumerate() {
        let us = tape.shape(u).to_vec();
        let (ch, r, c) = (us[0], us[1], us[2]);
        let up = if i == 0 {
            let p = tape.mean_axis(u, 1)?; // keep input axis
            tape.reshape(p, &[1, ch * c])?
        } else if i == m - 1 {
            let p = tape.mean_axis(u, 2)?; // keep output axis
            tape.reshape(p, &[1, ch * r])?
        } else {
            let p = tape.mean_axis(u, 1)?;
            let p = tape.mean_axis(p, 2)?;
            tape.reshape(p, &[1, ch])?
        };
        pieces.push(up);
        let vp = if i == m - 1 {
            tape.reshape(v, &[1, ch * r])?
        } else {
            let p = tape.mean_axis(v, 1)?;
            tape.reshape(p, &[1, ch])?
        };
        pieces.push(vp);
    }
    let x = tape.concat(&pieces, 1)?;
    let h = tape.matmul_nt(x, head.w1)?;
    let h = tape.add(h, head.b1)?;
    let h = tape.relu(h);
    let y = tape.matmul_nt(h, head.w2)?;
    tape.add(y, head.b2)
}

/// Full encoder forward on the tape → ψ as a [1, feature_dim] var.
pub fn encode_on_tape(
    tape: &mut Tape,
    params: &EncoderParams<Var>,
    feats: &[(Var, Var)],
    config: &EncoderConfig,
) -> Result<Var> {
    let mut cur = feats.to_vec();
    for layer in &params.layers {
        cur = layer_apply_on_tape(tape, layer, &cur)?;
        for (u, v) in &mut cur {
            *u = tape.relu(*u);
            *v = tape.relu(*v);
        }
    }
    let psi = head_on_tape(tape, &params.head, &cur)?;
    debug_assert_eq!(tape.shape(psi), &[1, config.feature_dim]);
    Ok(psi)
}

/// Inference-time single layer application (used by the equivariance
/// oracle tests; training drives layer_apply_on_tape directly).
pub fn equivariant_layer_apply(
    layer: &EquivariantLayerParams<Tensor>,
    feats: &FeatureStack,
) -> Result<FeatureStack> {
    let mut tape = Tape::new();
    let layer_vars = EquivariantLayerParams {
        u: layer
            .u
            .iter()
            .map(|t| {
                UTermParams {
                    id_map: tape.leaf(t.id_map.clone(), false),
                    row_pool: tape.leaf(t.row_pool.clone(), false),
                    col_pool: tape.leaf(t.col_pool.clone(), false),
                    both_pool: tape.leaf(t.both_pool.clone(), false),
                    from_v: tape.leaf(t.from_v.clone(), false),
                    from_prev_v: t.from_prev_v.as_ref().map(|x| tape.leaf(x.clone(), false)),
                    from_next_rowpool: t
                        .from_next_rowpool
                        .as_ref()
                        .map(|x| tape.leaf(x.clone(), false)),
                    from_prev_colpool: t
                        .from_prev_colpool
                        .as_ref()
                        .map(|x| tape.leaf(x.clone(), false)),
                    global: tape.leaf(t.global.clone(), false),
                    bias: tape.leaf(t.bias.clone(), false),
                }
            })
            .collect(),
        v: layer
            .v
            .iter()
            .map(|t| VTermParams {
                id_map: tape.leaf(t.id_map.clone(), false),
                pool: tape.leaf(t.pool.clone(), false),
                from_u_colpool: tape.leaf(t.from_u_colpool.clone(), false),
                from_next_rowpool: t
                    .from_next_rowpool
                    .as_ref()
                    .map(|x| tape.leaf(x.clone(), false)),
                global: tape.leaf(t.global.clone(), false),
                bias: tape.leaf(t.bias.clone(), false),
            })
            .collect(),
    };
    let fv = feats_on_tape(&mut tape, feats);
    let out = layer_apply_on_tape(&mut tape, &layer_vars, &fv)?;
    Ok(FeatureStack {
        blocks: out
            .into_iter()
            .map(|(u, v)| (tape.value(u).clone(), tape.value(v).clone()))
            .collect(),
    })
}

/// NT-Xent on the tape over a [2N, F] feature matrix where rows (i, i+N)
/// are positive pairs. Features are L2-normalized here; the diagonal is
/// masked out after temperature scaling.
pub fn nt_xent_on_tape(tape: &mut Tape, z: Var, tau: f64) -> Result<Var> {
    let shape = tape.shape(z).to_vec();
    if shape.len() != 2 || shape[0] % 2 != 0 || shape[0] < 4 {
        return Err(Error::contract("nt_xent needs a [2N, F] matrix with N >= 2"));
    }
    if tau <= 0.0 {
        return Err(Error::contract("nt_xent temperature must be positive"));
    }
    let n2 = shape[0];
    let n = n2 / 2;

    let zz = tape.mul(z, z)?;
    let ss = tape.sum_axis(zz, 1)?;
    let ss = tape.add_scalar(ss, 1e-12);
    let norm = tape.sqrt(ss);
    let zn = tape.div(z, norm)?;

    let sims = tape.matmul_nt(zn, zn)?;
    let sims = tape.scale(sims, 1.0 / tau);

    let mut diag = vec![0.0; n2 * n2];
    let mut pairs = vec![0.0; n2 * n2];
    for i in 0..n2 {
        diag[i * n2 + i] = -1e30;
        let j = if i < n { i + n } else { i - n };
        pairs[i * n2 + j] = 1.0;
    }
    let diag = tape.constant(Tensor::new(vec![n2, n2], diag)?);
    let pairs = tape.constant(Tensor::new(vec![n2, n2], pairs)?);

    let masked = tape.add(sims, diag)?;
    let probs = tape.softmax_last(masked)?;
    let p_pair = tape.mul(probs, pairs)?;
    let p_pair = tape.sum_axis(p_pair, 1)?;
    let logp = tape.ln(p_pair);
    let mean = tape.mean(logp);
    Ok(tape.neg(mean))
}

/// Value-level NT-Xent over paired features (i, i+N).
pub fn nt_xent_loss(features: &[EquivariantFeature], tau: f64) -> Result<f64> {
    if features.is_empty() || features.len() % 2 != 0 {
        return Err(Error::contract("nt_xent needs 2N features"));
    }
    let f = features[0].psi.len();
    let data: Vec<f64> = features.iter().flat_map(|e| e.psi.iter().copied()).collect();
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::new(vec![features.len(), f], data)?);
    let loss = nt_xent_on_tape(&mut tape, z, tau)?;
    Ok(tape.value(loss).item())
}

#[derive(Debug, Clone)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// canonicalize inputs with symmetry::smooth before augmenting
    pub use_smoothing: bool,
    pub smooth_restarts: usize,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions {
            epochs: 50,
            batch: 16,
            lr: 5e-3,
            weight_decay: 1e-4,
            seed: 0,
            use_smoothing: true,
            smooth_restarts: 3,
        }
    }
}

/// Contrastive pre-training: each batch pairs a (smoothed) weight vector
/// with a random augmentation of itself and minimizes NT-Xent over the 2N
/// encoded views. Returns the trained encoder and per-epoch mean loss.
pub fn pretrain(
    dataset: &[WeightVector],
    policy: &AugmentPolicy,
    config: &EncoderConfig,
    opts: &PretrainOptions,
) -> Result<(EquivariantEncoder, Vec<f64>)> {
    if dataset.len() < 2 {
        return Err(Error::contract("pretraining needs at least two weight vectors"));
    }
    let arch = &dataset[0].arch;
    if dataset.iter().any(|w| &w.arch != arch) {
        return Err(Error::contract("pretraining dataset mixes architectures"));
    }
    let views: Vec<WeightVector> = if opts.use_smoothing {
        dataset
            .iter()
            .enumerate()
            .map(|(i, w)| smooth(w, opts.smooth_restarts, mix(opts.seed, i as u64)).map(|(s, _)| s))
            .collect::<Result<_>>()?
    } else {
        dataset.to_vec()
    };

    let mut encoder = EquivariantEncoder::new(arch, config, mix(opts.seed, 0xE14C0));
    let mut opt = AdamW::new(opts.lr, opts.weight_decay);
    let batch = opts.batch.min(views.len()).max(2);
    let mut history = Vec::with_capacity(opts.epochs);
    let mut aug_counter = 0u64;

    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..views.len()).collect();
        order.shuffle(&mut rng_stream(mix(opts.seed, 0xE90C), epoch as u64));
        let mut epoch_loss = 0.0f64;
        let mut batches = 0.0f64;
        for chunk in order.chunks(batch) {
            if chunk.len() < 2 {
                continue;
            }
            let mut tape = Tape::new();
            let vars = encoder.params.map(|t| tape.leaf(t.clone(), true));
            let mut firsts = Vec::with_capacity(chunk.len());
            let mut seconds = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let base = &views[idx];
                aug_counter += 1;
                let aug = random_augmentation(base, policy, mix(opts.seed, 0xA000_0000 + aug_counter))?;
                let f1 = lift_on_tape(&mut tape, base);
                firsts.push(encode_on_tape(&mut tape, &vars, &f1, config)?);
                let f2 = lift_on_tape(&mut tape, &aug);
                seconds.push(encode_on_tape(&mut tape, &vars, &f2, config)?);
            }
            firsts.extend(seconds);
            let z = tape.concat(&firsts, 0)?;
            let loss = nt_xent_on_tape(&mut tape, z, config.tau)?;
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() {
                return Err(Error::Training { step: epoch });
            }
            tape.backward(loss)?;

            let grads: Vec<Tensor> = vars
                .flat()
                .iter()
                .map(|&&v| tape.grad_tensor(v).expect("param grad"))
                .collect();
            let mut params = encoder.params.flat_mut();
            let mut param_slices: Vec<&mut [f64]> =
                params.iter_mut().map(|t| t.data_mut()).collect();
            let grad_slices: Vec<&[f64]> = grads.iter().map(|g| g.data()).collect();
            opt.step(&mut param_slices, &grad_slices);

            epoch_loss += loss_val;
            batches += 1.0;
        }
        history.push(epoch_loss / batches.max(1.0));
    }
    Ok((encoder, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inr::{flatten, Activation, Tag, DEFAULT_OMEGA0};

    fn tiny_arch() -> MlpArchitecture {
        MlpArchitecture::new(
            vec![2, 5, 4, 1],
            Activation::Sine { omega0: DEFAULT_OMEGA0 },
            None,
            2,
        )
        .unwrap()
    }

    fn tiny_config() -> EncoderConfig {
        EncoderConfig { channels: 4, layers: 2, feature_dim: 8, head_hidden: 8, tau: 0.5 }
    }

    fn net(arch: &MlpArchitecture, seed: u64) -> WeightVector {
        flatten(arch, &arch.init_params(seed), Tag::Raw).unwrap()
    }

    #[test]
    fn encode_is_deterministic_and_finite() {
        let arch = tiny_arch();
        let enc = EquivariantEncoder::new(&arch, &tiny_config(), 1);
        let zero = WeightVector::new(arch.clone(), vec![0.0; arch.param_count()], Tag::Raw).unwrap();
        let a = enc.encode(&zero).unwrap();
        let b = enc.encode(&zero).unwrap();
        assert_eq!(a.psi, b.psi);
        assert!(a.is_finite());
        assert_eq!(a.psi.len(), 8);
    }

    #[test]
    fn encode_rejects_other_arch() {
        let enc = EquivariantEncoder::new(&tiny_arch(), &tiny_config(), 1);
        let other = MlpArchitecture::new(
            vec![2, 6, 1],
            Activation::Sine { omega0: DEFAULT_OMEGA0 },
            None,
            2,
        )
        .unwrap();
        assert!(matches!(enc.encode(&net(&other, 0)), Err(Error::Contract(_))));
    }

    #[test]
    fn encoder_is_permutation_invariant() {
        let arch = tiny_arch();
        let enc = EquivariantEncoder::new(&arch, &tiny_config(), 2);
        let w = net(&arch, 3);
        let base = enc.encode(&w).unwrap();
        for g_seed in 0..10 {
            let g = PermutationPlan::random(&arch, g_seed);
            let permuted = crate::symmetry::act(&g, &w).unwrap();
            let psi = enc.encode(&permuted).unwrap();
            let dev = base
                .psi
                .iter()
                .zip(&psi.psi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(dev < 1e-6, "seed {g_seed}: deviation {dev}");
        }
    }

    #[test]
    fn layer_is_exactly_equivariant() {
        let arch = tiny_arch();
        let enc = EquivariantEncoder::new(&arch, &tiny_config(), 4);
        // multi-channel random input features
        let mut rng = rng_stream(5, 0);
        let blocks = arch
            .layer_shapes()
            .iter()
            .map(|&(r, c)| {
                (
                    Tensor::rand_uniform(&[4, r, c], -1.0, 1.0, &mut rng),
                    Tensor::rand_uniform(&[4, r], -1.0, 1.0, &mut rng),
                )
            })
            .collect();
        let feats = FeatureStack { blocks };
        let layer = &enc.params.layers[1]; // channels 4 -> 4
        for g_seed in 0..8 {
            let g = PermutationPlan::random(&arch, 100 + g_seed);
            let out_then_permute = equivariant_layer_apply(layer, &feats).unwrap().permute(&g);
            let permute_then_out = equivariant_layer_apply(layer, &feats.permute(&g)).unwrap();
            for (a, b) in out_then_permute.blocks.iter().zip(&permute_then_out.blocks) {
                let du = a.0.data().iter().zip(b.0.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                let dv = a.1.data().iter().zip(b.1.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(du < 1e-9 && dv < 1e-9, "seed {g_seed}: {du} {dv}");
            }
        }
    }

    #[test]
    fn degenerate_single_neuron_axis() {
        let arch = MlpArchitecture::new(
            vec![2, 1, 1],
            Activation::Sine { omega0: DEFAULT_OMEGA0 },
            None,
            2,
        )
        .unwrap();
        let enc = EquivariantEncoder::new(&arch, &tiny_config(), 6);
        let w = net(&arch, 7);
        // width-1 axes: permutations are trivial and encode just works
        let psi = enc.encode(&w).unwrap();
        assert!(psi.is_finite());
    }

    #[test]
    fn nt_xent_hand_value() {
        // two pairs; pair members identical, cross-pairs orthogonal, tau 1
        let e1 = EquivariantFeature { psi: vec![1.0, 0.0] };
        let e2 = EquivariantFeature { psi: vec![0.0, 1.0] };
        // per anchor: −log(e¹ / (e¹ + 2·e⁰)) — pair at sim 1, two
        // orthogonal candidates at sim 0
        let loss = nt_xent_loss(&[e1.clone(), e2.clone(), e1, e2], 1.0).unwrap();
        let expected = -(std::f64::consts::E / (std::f64::consts::E + 2.0)).ln();
        assert!((loss - expected).abs() < 1e-9, "loss {loss} vs {expected}");
        assert!((expected - 0.5514447).abs() < 1e-6);
    }

    #[test]
    fn nt_xent_limits_and_contracts() {
        let mut rng = rng_stream(8, 0);
        let feats: Vec<EquivariantFeature> = (0..6)
            .map(|_| EquivariantFeature {
                psi: Tensor::rand_uniform(&[4], -1.0, 1.0, &mut rng).into_data(),
            })
            .collect();
        // tau → ∞: softmax flattens to uniform over 2N−1 candidates
        let loss = nt_xent_loss(&feats, 1e6).unwrap();
        assert!((loss - (5.0f64).ln()).abs() < 1e-3, "loss {loss}");

        // permuting pairs jointly leaves the loss unchanged
        let base = nt_xent_loss(&feats, 0.5).unwrap();
        let swapped = vec![
            feats[1].clone(),
            feats[0].clone(),
            feats[2].clone(),
            feats[4].clone(),
            feats[3].clone(),
            feats[5].clone(),
        ];
        let loss2 = nt_xent_loss(&swapped, 0.5).unwrap();
        assert!((base - loss2).abs() < 1e-12);

        assert!(nt_xent_loss(&feats[..2], 0.5).is_err());
        assert!(nt_xent_loss(&feats[..4], 0.0).is_err());
        assert!(nt_xent_loss(&feats[..3], 0.5).is_err());
    }
}
