//! Weight-space diffusion guided by equivariant features.
//!
//! A squared-cosine noise schedule, a small token transformer that predicts
//! the clean weights directly (x₀ parameterization), a composite loss
//! L_recon + λ·L_eq where L_eq matches equivariant features of the
//! prediction against the conditioning features through a frozen encoder,
//! an EMA shadow of the denoiser parameters, and DDIM sampling.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::encoder::{encode_on_tape, lift_var_on_tape, EquivariantEncoder, EquivariantFeature};
use crate::error::{Error, Result};
use crate::inr::{MlpArchitecture, Tag, WeightVector};
use crate::optim::AdamW;
use crate::rng::{mix, rng_stream};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const EMA_BETA: f64 = 0.99;
pub const DDIM_DEFAULT_STEPS: usize = 50;
/// Coordinates whose dataset std falls below this are effectively frozen:
/// they normalize to 0 and samples reproduce the dataset mean there.
const STD_FLOOR: f64 = 1e-6;

// ── noise schedule ───────────────────────────────────────────────────

/// Squared-cosine schedule. `alpha_bar` is authoritative (length T+1 with
/// `alpha_bar[0] = 1`); betas are derived per transition and clipped, and
/// are only used where a per-step variance is needed.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub t_max: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

pub fn make_schedule(t_max: usize) -> Result<DiffusionSchedule> {
    if t_max == 0 {
        return Err(Error::contract("schedule needs at least one timestep"));
    }
    let s = 0.008;
    let f = |u: f64| (((u + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    let f0 = f(0.0);
    let alpha_bar: Vec<f64> = (0..=t_max).map(|t| f(t as f64 / t_max as f64) / f0).collect();
    let betas: Vec<f64> = (0..t_max)
        .map(|t| (1.0 - alpha_bar[t + 1] / alpha_bar[t]).clamp(1e-8, 0.999))
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    Ok(DiffusionSchedule { t_max, betas, alphas, alpha_bar })
}

/// q(x_t | x₀): √(ᾱ_t)·x₀ + √(1−ᾱ_t)·ε. Accepts 0 ≤ t ≤ T.
pub fn forward_noise(
    x0: &[f64],
    t: usize,
    eps: &[f64],
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    if t > schedule.t_max {
        return Err(Error::contract(format!(
            "timestep {t} outside schedule 0..={}",
            schedule.t_max
        )));
    }
    if x0.len() != eps.len() {
        return Err(Error::dimension(format!(
            "{} weights vs {} noise entries",
            x0.len(),
            eps.len()
        )));
    }
    let ab = schedule.alpha_bar[t];
    let (ca, ce) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| ca * x + ce * e).collect())
}

/// Invert the x₀ parameterization: ε̂ such that forward_noise(x̂₀, t, ε̂)
/// reproduces x_t. Returns zeros at t = 0 where the relation is singular.
pub fn recover_eps(
    x_t: &[f64],
    x0_hat: &[f64],
    t: usize,
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    if x_t.len() != x0_hat.len() {
        return Err(Error::dimension("x_t and x̂₀ length mismatch"));
    }
    if t > schedule.t_max {
        return Err(Error::contract("timestep outside schedule"));
    }
    let ab = schedule.alpha_bar[t];
    if 1.0 - ab <= 0.0 {
        return Ok(vec![0.0; x_t.len()]);
    }
    let (ca, inv) = (ab.sqrt(), 1.0 / (1.0 - ab).sqrt());
    Ok(x_t.iter().zip(x0_hat).map(|(xt, x0)| (xt - ca * x0) * inv).collect())
}

// ── per-coordinate standardization ───────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(dataset: &[WeightVector]) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::contract("normalizer needs a non-empty dataset"));
        }
        let d = dataset[0].values.len();
        if dataset.iter().any(|w| w.values.len() != d) {
            return Err(Error::dimension("normalizer dataset mixes weight lengths"));
        }
        let n = dataset.len() as f64;
        let mut mean = vec![0.0; d];
        for w in dataset {
            for (m, &x) in mean.iter_mut().zip(&w.values) {
                *m += x / n;
            }
        }
        let mut std = vec![0.0; d];
        for w in dataset {
            for (s, (&x, &m)) in std.iter_mut().zip(w.values.iter().zip(&mean)) {
                *s += (x - m) * (x - m) / n;
            }
        }
        for s in std.iter_mut() {
            *s = (*s).sqrt().max(STD_FLOOR);
        }
        Ok(Normalizer { mean, std })
    }

    pub fn identity(d: usize) -> Self {
        Normalizer { mean: vec![0.0; d], std: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

// ── denoiser ─────────────────────────────────────────────────────────

/// Token transformer over 2 tokens per MLP layer (one for W_m, one for
/// b_m); each slot has its own input/output projection since slot widths
/// differ. ψ conditions every block through cross-attention to a single
/// key/value token.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub psi_dim: usize,
    /// flat length of each token slot: [|W₁|, |b₁|, |W₂|, |b₂|, ...]
    pub token_layout: Vec<usize>,
}

impl DenoiserConfig {
    pub fn for_arch(
        arch: &MlpArchitecture,
        num_layers: usize,
        num_heads: usize,
        hidden_size: usize,
        psi_dim: usize,
    ) -> Self {
        let token_layout = arch
            .layer_shapes()
            .iter()
            .flat_map(|&(o, i)| [o * i, o])
            .collect();
        DenoiserConfig { num_layers, num_heads, hidden_size, psi_dim, token_layout }
    }

    /// Desk-scale preset: 4 blocks, 4 heads, 256 hidden.
    pub fn default_for(arch: &MlpArchitecture, psi_dim: usize) -> Self {
        Self::for_arch(arch, 4, 4, 256, psi_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_heads == 0 {
            return Err(Error::Config("denoiser needs >= 1 block and head".into()));
        }
        if self.hidden_size == 0 || self.hidden_size % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden_size, self.num_heads
            )));
        }
        if self.psi_dim == 0 {
            return Err(Error::Config("psi dimension must be positive".into()));
        }
        if self.token_layout.is_empty() || self.token_layout.iter().any(|&l| l == 0) {
            return Err(Error::Config("empty token layout".into()));
        }
        Ok(())
    }

    pub fn weight_dim(&self) -> usize {
        self.token_layout.iter().sum()
    }

    pub fn matches_arch(&self, arch: &MlpArchitecture) -> bool {
        let expect: Vec<usize> =
            arch.layer_shapes().iter().flat_map(|&(o, i)| [o * i, o]).collect();
        self.token_layout == expect
    }
}

#[derive(Debug, Clone)]
pub struct AttentionParams<T> {
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub bk: T,
    pub wv: T,
    pub bv: T,
    pub wo: T,
    pub bo: T,
}

impl<T> AttentionParams<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> AttentionParams<U> {
        AttentionParams {
            wq: f(&self.wq),
            bq: f(&self.bq),
            wk: f(&self.wk),
            bk: f(&self.bk),
            wv: f(&self.wv),
            bv: f(&self.bv),
            wo: f(&self.wo),
            bo: f(&self.bo),
        }
    }

    fn flat(&self) -> [&T; 8] {
        [&self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo]
    }

    fn flat_mut(&mut self) -> [&mut T; 8] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct BlockParams<T> {
    pub ln1_g: T,
    pub ln1_b: T,
    pub self_attn: AttentionParams<T>,
    pub ln2_g: T,
    pub ln2_b: T,
    pub cross_attn: AttentionParams<T>,
    pub ln3_g: T,
    pub ln3_b: T,
    pub mlp_w1: T,
    pub mlp_b1: T,
    pub mlp_w2: T,
    pub mlp_b2: T,
}

#[derive(Debug, Clone)]
pub struct DenoiserParams<T> {
    /// per-slot ([hidden, slot_len], [hidden])
    pub in_proj: Vec<(T, T)>,
    /// ψ → single key/value token ([hidden, psi_dim], [hidden])
    pub psi_proj: (T, T),
    pub blocks: Vec<BlockParams<T>>,
    pub ln_f_g: T,
    pub ln_f_b: T,
    /// per-slot ([slot_len, hidden], [slot_len])
    pub out_proj: Vec<(T, T)>,
}

impl<T> DenoiserParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> DenoiserParams<U> {
        DenoiserParams {
            in_proj: self.in_proj.iter().map(|(w, b)| (f(w), f(b))).collect(),
            psi_proj: (f(&self.psi_proj.0), f(&self.psi_proj.1)),
            blocks: self
                .blocks
                .iter()
                .map(|blk| BlockParams {
                    ln1_g: f(&blk.ln1_g),
                    ln1_b: f(&blk.ln1_b),
                    self_attn: blk.self_attn.map(&mut f),
                    ln2_g: f(&blk.ln2_g),
                    ln2_b: f(&blk.ln2_b),
                    cross_attn: blk.cross_attn.map(&mut f),
                    ln3_g: f(&blk.ln3_g),
                    ln3_b: f(&blk.ln3_b),
                    mlp_w1: f(&blk.mlp_w1),
                    mlp_b1: f(&blk.mlp_b1),
                    mlp_w2: f(&blk.mlp_w2),
                    mlp_b2: f(&blk.mlp_b2),
                })
                .collect(),
            ln_f_g: f(&self.ln_f_g),
            ln_f_b: f(&self.ln_f_b),
            out_proj: self.out_proj.iter().map(|(w, b)| (f(w), f(b))).collect(),
        }
    }

    pub fn flat(&self) -> Vec<&T> {
        let mut out = Vec::new();
        for (w, b) in &self.in_proj {
            out.extend([w, b]);
        }
        out.extend([&self.psi_proj.0, &self.psi_proj.1]);
        for blk in &self.blocks {
            out.extend([&blk.ln1_g, &blk.ln1_b]);
            out.extend(blk.self_attn.flat());
            out.extend([&blk.ln2_g, &blk.ln2_b]);
            out.extend(blk.cross_attn.flat());
            out.extend([&blk.ln3_g, &blk.ln3_b]);
            out.extend([&blk.mlp_w1, &blk.mlp_b1, &blk.mlp_w2, &blk.mlp_b2]);
        }
        out.extend([&self.ln_f_g, &self.ln_f_b]);
        for (w, b) in &self.out_proj {
            out.extend([w, b]);
        }
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for (w, b) in &mut self.in_proj {
            out.extend([w, b]);
        }
        out.extend([&mut self.psi_proj.0, &mut self.psi_proj.1]);
        for blk in &mut self.blocks {
            out.extend([&mut blk.ln1_g, &mut blk.ln1_b]);
            out.extend(blk.self_attn.flat_mut());
            out.extend([&mut blk.ln2_g, &mut blk.ln2_b]);
            out.extend(blk.cross_attn.flat_mut());
            out.extend([&mut blk.ln3_g, &mut blk.ln3_b]);
            out.extend([&mut blk.mlp_w1, &mut blk.mlp_b1, &mut blk.mlp_w2, &mut blk.mlp_b2]);
        }
        out.extend([&mut self.ln_f_g, &mut self.ln_f_b]);
        for (w, b) in &mut self.out_proj {
            out.extend([w, b]);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: DenoiserParams<Tensor>,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_size;
        let mut counter = 0u64;
        let mut dense = |rows: usize, cols: usize| -> Tensor {
            counter += 1;
            let mut rng = rng_stream(mix(seed, 0xDE40), counter);
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::new(vec![rows, cols], data).expect("dense init")
        };
        let zeros = |n: usize| Tensor::zeros(&[n]);
        let ones = |n: usize| Tensor::full(&[n], 1.0);
        fn attn_init(
            dense: &mut impl FnMut(usize, usize) -> Tensor,
            d: usize,
        ) -> AttentionParams<Tensor> {
            AttentionParams {
                wq: dense(d, d),
                bq: Tensor::zeros(&[d]),
                wk: dense(d, d),
                bk: Tensor::zeros(&[d]),
                wv: dense(d, d),
                bv: Tensor::zeros(&[d]),
                wo: dense(d, d),
                bo: Tensor::zeros(&[d]),
            }
        }
        let mut blocks = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            let self_attn = attn_init(&mut dense, d);
            let cross_attn = attn_init(&mut dense, d);
            blocks.push(BlockParams {
                ln1_g: ones(d),
                ln1_b: zeros(d),
                self_attn,
                ln2_g: ones(d),
                ln2_b: zeros(d),
                cross_attn,
                ln3_g: ones(d),
                ln3_b: zeros(d),
                mlp_w1: dense(2 * d, d),
                mlp_b1: zeros(2 * d),
                mlp_w2: dense(d, 2 * d),
                mlp_b2: zeros(d),
            });
        }
        let params = DenoiserParams {
            in_proj: config.token_layout.iter().map(|&l| (dense(d, l), zeros(d))).collect(),
            psi_proj: (dense(d, config.psi_dim), zeros(d)),
            blocks,
            ln_f_g: ones(d),
            ln_f_b: zeros(d),
            out_proj: config.token_layout.iter().map(|&l| (dense(l, d), zeros(l))).collect(),
        };
        Ok(Denoiser { config, params })
    }

    /// Inference convenience: x̂₀ = G(x_t, t, ψ) with this model's own
    /// parameters, no gradients recorded.
    pub fn predict(&self, x_t: &[f64], t: usize, psi: &[f64]) -> Result<Vec<f64>> {
        predict_with(&self.config, &self.params, x_t, t, psi)
    }
}

/// Raw sinusoidal embedding of an integer timestep.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000.0f64.ln()) * i as f64 / half as f64).exp();
        let a = t as f64 * freq;
        e[i] = a.sin();
        e[half + i] = a.cos();
    }
    e
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul_nt(x, w)?;
    tape.add(y, b)
}

fn affine_norm(tape: &mut Tape, x: Var, g: Var, b: Var) -> Result<Var> {
    let n = tape.layer_norm_last(x, 1e-5)?;
    let scaled = tape.mul(n, g)?;
    tape.add(scaled, b)
}

/// Multi-head attention of `queries` against `keys_values`; heads are
/// column slices of the hidden axis.
fn attention(
    tape: &mut Tape,
    p: &AttentionParams<Var>,
    queries: Var,
    keys_values: Var,
    heads: usize,
) -> Result<Var> {
    let q = linear(tape, queries, p.wq, p.bq)?;
    let k = linear(tape, keys_values, p.wk, p.bk)?;
    let v = linear(tape, keys_values, p.wv, p.bv)?;
    let d = tape.shape(q)[1];
    let dh = d / heads;
    let mut parts = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice(q, 1, h * dh, dh)?;
        let kh = tape.slice(k, 1, h * dh, dh)?;
        let vh = tape.slice(v, 1, h * dh, dh)?;
        let scores = tape.matmul_nt(qh, kh)?;
        let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let probs = tape.softmax_last(scaled)?;
        parts.push(tape.matmul(probs, vh)?);
    }
    let merged = tape.concat(&parts, 1)?;
    linear(tape, merged, p.wo, p.bo)
}

/// Full denoiser forward on the tape: x [1, D] and ψ [1, psi_dim] in,
/// x̂₀ [1, D] out.
pub fn denoise_on_tape(
    tape: &mut Tape,
    config: &DenoiserConfig,
    params: &DenoiserParams<Var>,
    x: Var,
    t: usize,
    psi: Var,
) -> Result<Var> {
    let d_total = config.weight_dim();
    let xs = tape.shape(x).to_vec();
    if xs != [1, d_total] {
        return Err(Error::dimension(format!(
            "denoiser expects [1, {d_total}] input, got {xs:?}"
        )));
    }
    let ps = tape.shape(psi).to_vec();
    if ps != [1, config.psi_dim] {
        return Err(Error::dimension(format!(
            "conditioning feature must be [1, {}], got {ps:?}",
            config.psi_dim
        )));
    }

    let mut tokens = Vec::with_capacity(config.token_layout.len());
    let mut at = 0;
    for (&len, (w, b)) in config.token_layout.iter().zip(&params.in_proj) {
        let piece = tape.slice(x, 1, at, len)?;
        at += len;
        tokens.push(linear(tape, piece, *w, *b)?);
    }
    let mut h = tape.concat(&tokens, 0)?;
    let temb = time_embedding(t, config.hidden_size);
    let temb = tape.constant(Tensor::new(vec![1, config.hidden_size], temb)?);
    h = tape.add(h, temb)?;

    let psi_tok = linear(tape, psi, params.psi_proj.0, params.psi_proj.1)?;

    for blk in &params.blocks {
        let a = affine_norm(tape, h, blk.ln1_g, blk.ln1_b)?;
        let sa = attention(tape, &blk.self_attn, a, a, config.num_heads)?;
        h = tape.add(h, sa)?;
        // with a single key/value token the attention weights are
        // identically 1; the query path is kept for the stated form
        let a = affine_norm(tape, h, blk.ln2_g, blk.ln2_b)?;
        let ca = attention(tape, &blk.cross_attn, a, psi_tok, config.num_heads)?;
        h = tape.add(h, ca)?;
        let a = affine_norm(tape, h, blk.ln3_g, blk.ln3_b)?;
        let m1 = linear(tape, a, blk.mlp_w1, blk.mlp_b1)?;
        let m1 = tape.relu(m1);
        let m2 = linear(tape, m1, blk.mlp_w2, blk.mlp_b2)?;
        h = tape.add(h, m2)?;
    }
    let h = affine_norm(tape, h, params.ln_f_g, params.ln_f_b)?;

    let mut outs = Vec::with_capacity(config.token_layout.len());
    for (s, (w, b)) in params.out_proj.iter().enumerate() {
        let row = tape.slice(h, 0, s, 1)?;
        outs.push(linear(tape, row, *w, *b)?);
    }
    tape.concat(&outs, 1)
}

/// x̂₀ prediction with explicit (e.g. EMA) parameters, no gradients.
pub fn predict_with(
    config: &DenoiserConfig,
    params: &DenoiserParams<Tensor>,
    x_t: &[f64],
    t: usize,
    psi: &[f64],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.map(|p| tape.constant(p.clone()));
    let x = tape.constant(Tensor::new(vec![1, x_t.len()], x_t.to_vec())?);
    let c = tape.constant(Tensor::new(vec![1, psi.len()], psi.to_vec())?);
    let out = denoise_on_tape(&mut tape, config, &vars, x, t, c)?;
    Ok(tape.value(out).data().to_vec())
}

// ── training ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct StepLosses {
    pub recon: f64,
    pub eq: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub arch: MlpArchitecture,
    pub denoiser: Denoiser,
    pub ema: DenoiserParams<Tensor>,
    pub opt: AdamW,
    pub schedule: DiffusionSchedule,
    pub normalizer: Normalizer,
    pub lambda: f64,
    pub ema_beta: f64,
    pub step: usize,
    pub seed: u64,
}

impl TrainState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        arch: &MlpArchitecture,
        config: &DenoiserConfig,
        normalizer: Normalizer,
        t_max: usize,
        lambda: f64,
        lr: f64,
        weight_decay: f64,
        seed: u64,
    ) -> Result<Self> {
        if !config.matches_arch(arch) {
            return Err(Error::contract("denoiser token layout does not match architecture"));
        }
        if normalizer.dim() != arch.param_count() {
            return Err(Error::dimension("normalizer dimension does not match architecture"));
        }
        if lambda < 0.0 {
            return Err(Error::contract("lambda must be >= 0"));
        }
        let denoiser = Denoiser::new(config.clone(), mix(seed, 0xD40))?;
        let ema = denoiser.params.clone();
        Ok(TrainState {
            arch: arch.clone(),
            denoiser,
            ema,
            opt: AdamW::new(lr, weight_decay),
            schedule: make_schedule(t_max)?,
            normalizer,
            lambda,
            ema_beta: EMA_BETA,
            step: 0,
            seed,
        })
    }
}

/// One optimizer step on a batch of (clean weights, conditioning feature).
/// Draws a fresh (t, ε) per item, forms x̂₀ = G(x_t, t, ψ), and minimizes
/// L_recon + λ·L_eq. The encoder is frozen: gradients reach the denoiser
/// only. L_eq feeds the encoder original-scale weights since that is the
/// scale it was pre-trained on.
pub fn train_step(
    state: &mut TrainState,
    batch: &[(&WeightVector, &EquivariantFeature)],
    encoder: Option<&EquivariantEncoder>,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::contract("empty diffusion batch"));
    }
    let config = state.denoiser.config.clone();
    for (w, psi) in batch {
        if w.arch != state.arch {
            return Err(Error::contract("batch item architecture mismatch"));
        }
        if psi.psi.len() != config.psi_dim {
            return Err(Error::dimension(format!(
                "conditioning feature dim {} vs configured {}",
                psi.psi.len(),
                config.psi_dim
            )));
        }
    }
    let enc = match (state.lambda > 0.0, encoder) {
        (true, None) => return Err(Error::contract("lambda > 0 requires the frozen encoder")),
        (_, e) => e,
    };
    if let Some(e) = enc {
        if e.arch != state.arch {
            return Err(Error::contract("encoder architecture mismatch"));
        }
    }

    let mut rng = rng_stream(mix(state.seed, 0xD1FF), state.step as u64);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let d = state.arch.param_count();
    let n = batch.len() as f64;

    let mut tape = Tape::new();
    let vars = state.denoiser.params.map(|p| tape.leaf(p.clone(), true));
    let enc_vars = enc.map(|e| e.params.map(|p| tape.constant(p.clone())));
    let mean_c = tape.constant(Tensor::new(vec![1, d], state.normalizer.mean.clone())?);
    let std_c = tape.constant(Tensor::new(vec![1, d], state.normalizer.std.clone())?);

    let mut recon_terms = Vec::with_capacity(batch.len());
    let mut eq_terms = Vec::with_capacity(batch.len());
    for (w, psi) in batch {
        let t = rng.random_range(1..=state.schedule.t_max);
        let eps: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
        let x0 = state.normalizer.normalize(&w.values);
        let x_t = forward_noise(&x0, t, &eps, &state.schedule)?;

        let x_t = tape.constant(Tensor::new(vec![1, d], x_t)?);
        let psi_c = tape.constant(Tensor::new(vec![1, config.psi_dim], psi.psi.clone())?);
        let x0_hat = denoise_on_tape(&mut tape, &config, &vars, x_t, t, psi_c)?;

        let x0_c = tape.constant(Tensor::new(vec![1, d], x0)?);
        let diff = tape.sub(x0_hat, x0_c)?;
        recon_terms.push(tape.sumsq(diff));

        if let (Some(e), Some(ev)) = (enc, &enc_vars) {
            let scaled = tape.mul(x0_hat, std_c)?;
            let w_orig = tape.add(scaled, mean_c)?;
            let blocks = lift_var_on_tape(&mut tape, &state.arch, w_orig)?;
            let feat = encode_on_tape(&mut tape, ev, &blocks, &e.config)?;
            let fdiff = tape.sub(feat, psi_c)?;
            eq_terms.push(tape.sumsq(fdiff));
        }
    }

    let recon_sum = tape.concat(&recon_terms, 0)?;
    let recon_sum = tape.sum(recon_sum);
    let recon = tape.scale(recon_sum, 1.0 / n);
    let total = if eq_terms.is_empty() {
        recon
    } else {
        let eq_sum = tape.concat(&eq_terms, 0)?;
        let eq_sum = tape.sum(eq_sum);
        let eq = tape.scale(eq_sum, state.lambda / n);
        tape.add(recon, eq)?
    };

    let recon_val = tape.value(recon).item();
    let total_val = tape.value(total).item();
    let eq_val = if state.lambda > 0.0 { (total_val - recon_val) / state.lambda } else { 0.0 };
    if !total_val.is_finite() {
        return Err(Error::Training { step: state.step });
    }
    tape.backward(total)?;

    let grads: Vec<Tensor> = vars
        .flat()
        .iter()
        .map(|&&v| tape.grad_tensor(v).expect("denoiser grad"))
        .collect();
    let mut params = state.denoiser.params.flat_mut();
    let mut param_slices: Vec<&mut [f64]> = params.iter_mut().map(|t| t.data_mut()).collect();
    let grad_slices: Vec<&[f64]> = grads.iter().map(|g| g.data()).collect();
    state.opt.step(&mut param_slices, &grad_slices);
    drop(params);

    let beta = state.ema_beta;
    for (shadow, current) in state.ema.flat_mut().into_iter().zip(state.denoiser.params.flat()) {
        for (s, &c) in shadow.data_mut().iter_mut().zip(current.data()) {
            *s = beta * *s + (1.0 - beta) * c;
        }
    }
    state.step += 1;
    Ok(StepLosses { recon: recon_val, eq: eq_val, total: total_val })
}

#[derive(Debug, Clone)]
pub struct DiffusionTrainOptions {
    pub steps: usize,
    pub batch: usize,
    pub t_max: usize,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    /// Multiply the learning rate by `lr_decay_factor` every this many
    /// steps (0 disables the stepped decay).
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub ema_beta: f64,
    pub seed: u64,
}

impl Default for DiffusionTrainOptions {
    fn default() -> Self {
        DiffusionTrainOptions {
            steps: 1500,
            batch: 8,
            t_max: DEFAULT_TIMESTEPS,
            lambda: DEFAULT_LAMBDA,
            lr: 1e-3,
            weight_decay: 0.0,
            lr_decay_every: 0,
            lr_decay_factor: 1.0,
            ema_beta: EMA_BETA,
            seed: 0,
        }
    }
}

/// Train a denoiser on a weight dataset conditioned on each item's own
/// equivariant feature. Returns the final state and per-step losses.
pub fn train_diffusion(
    dataset: &[WeightVector],
    encoder: &EquivariantEncoder,
    config: &DenoiserConfig,
    opts: &DiffusionTrainOptions,
) -> Result<(TrainState, Vec<StepLosses>)> {
    if dataset.is_empty() {
        return Err(Error::contract("diffusion training needs a non-empty dataset"));
    }
    let arch = &dataset[0].arch;
    if dataset.iter().any(|w| &w.arch != arch) {
        return Err(Error::contract("diffusion dataset mixes architectures"));
    }
    let features: Vec<EquivariantFeature> =
        dataset.iter().map(|w| encoder.encode(w)).collect::<Result<_>>()?;
    let normalizer = Normalizer::fit(dataset)?;
    let mut state = TrainState::new(
        arch,
        config,
        normalizer,
        opts.t_max,
        opts.lambda,
        opts.lr,
        opts.weight_decay,
        opts.seed,
    )?;
    state.ema_beta = opts.ema_beta;
    let mut history = Vec::with_capacity(opts.steps);
    let mut rng = rng_stream(mix(opts.seed, 0xBA7C), 0);
    for s in 0..opts.steps {
        if opts.lr_decay_every > 0 && s > 0 && s % opts.lr_decay_every == 0 {
            state.opt.lr *= opts.lr_decay_factor;
        }
        let batch: Vec<(&WeightVector, &EquivariantFeature)> = (0..opts.batch.min(dataset.len()))
            .map(|_| {
                let i = rng.random_range(0..dataset.len());
                (&dataset[i], &features[i])
            })
            .collect();
        history.push(train_step(&mut state, &batch, Some(encoder))?);
    }
    Ok((state, history))
}

// ── sampling ─────────────────────────────────────────────────────────

/// DDIM with an injectable x̂₀ model — the recursion only, working in the
/// model's own space. `denoise_fn(x_t, t)` must return x̂₀.
pub fn ddim_sample_with<F>(
    mut denoise_fn: F,
    schedule: &DiffusionSchedule,
    dim: usize,
    num_steps: usize,
    eta: f64,
    seed: u64,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], usize) -> Result<Vec<f64>>,
{
    if num_steps == 0 || num_steps > schedule.t_max {
        return Err(Error::contract(format!(
            "num_steps {num_steps} outside 1..={}",
            schedule.t_max
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::contract("eta must lie in [0, 1]"));
    }
    let mut rng = rng_stream(mix(seed, 0xDD1A), 0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let t_max = schedule.t_max;
    let times: Vec<usize> = (0..num_steps).map(|k| ((k + 1) * t_max) / num_steps).collect();

    let mut x: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
    for k in (0..times.len()).rev() {
        let t_hi = times[k];
        let t_lo = if k > 0 { times[k - 1] } else { 0 };
        let x0_hat = denoise_fn(&x, t_hi)?;
        if x0_hat.len() != dim {
            return Err(Error::dimension("denoiser returned wrong length"));
        }
        let ab_hi = schedule.alpha_bar[t_hi];
        let ab_lo = schedule.alpha_bar[t_lo];
        let eps_hat = recover_eps(&x, &x0_hat, t_hi, schedule)?;
        let sigma = if eta > 0.0 && 1.0 - ab_hi > 0.0 {
            eta * ((1.0 - ab_lo) / (1.0 - ab_hi)).sqrt() * (1.0 - ab_hi / ab_lo).max(0.0).sqrt()
        } else {
            0.0
        };
        let dir = (1.0 - ab_lo - sigma * sigma).max(0.0).sqrt();
        let ca = ab_lo.sqrt();
        for i in 0..dim {
            x[i] = ca * x0_hat[i] + dir * eps_hat[i];
            if sigma > 0.0 {
                x[i] += sigma * normal.sample(&mut rng);
            }
        }
    }
    Ok(x)
}

/// Sample a weight vector conditioned on ψ using the EMA parameters,
/// denormalizing back to original scale. Deterministic for eta = 0.
pub fn ddim_sample(
    state: &TrainState,
    psi: &EquivariantFeature,
    num_steps: usize,
    eta: f64,
    seed: u64,
) -> Result<WeightVector> {
    let config = &state.denoiser.config;
    if psi.psi.len() != config.psi_dim {
        return Err(Error::dimension(format!(
            "conditioning feature dim {} vs configured {}",
            psi.psi.len(),
            config.psi_dim
        )));
    }
    let d = state.arch.param_count();
    let normed = ddim_sample_with(
        |x_t, t| predict_with(config, &state.ema, x_t, t, &psi.psi),
        &state.schedule,
        d,
        num_steps,
        eta,
        seed,
    )?;
    let data = state.normalizer.denormalize(&normed);
    WeightVector::new(state.arch.clone(), data, Tag::Generated)
}
