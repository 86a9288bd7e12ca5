//! Few-shot adaptation: fine-tune a trained diffusion state on k support
//! weights of an unseen class, then generate variations by disturbing the
//! support features in the equivariant subspace (ψ̃ = ψ + γ·ε).

use rand_distr::{Distribution, Normal};

use crate::diffusion::{
    ddim_sample, train_step, StepLosses, TrainState, DDIM_DEFAULT_STEPS,
};
use crate::encoder::{EquivariantEncoder, EquivariantFeature};
use crate::error::{Error, Result};
use crate::inr::{MlpArchitecture, WeightVector};
use crate::rng::{mix, rng_stream};
use crate::symmetry::smooth;

pub const DEFAULT_GAMMA: f64 = 0.3;

/// k example weights of one unseen class, canonicalized by smoothing, with
/// their equivariant features cached for conditioning.
#[derive(Debug, Clone)]
pub struct SupportSet {
    pub items: Vec<WeightVector>,
    pub features: Vec<EquivariantFeature>,
}

impl SupportSet {
    /// Smooth every support weight once, then encode it. The smoothed
    /// variants are what fine-tuning and conditioning see.
    pub fn new(
        weights: &[WeightVector],
        encoder: &EquivariantEncoder,
        smooth_restarts: usize,
        seed: u64,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::contract("support set needs at least one weight vector"));
        }
        let arch = &weights[0].arch;
        if weights.iter().any(|w| &w.arch != arch) {
            return Err(Error::contract("support set mixes architectures"));
        }
        if &encoder.arch != arch {
            return Err(Error::contract("encoder was built for a different architecture"));
        }
        let mut items = Vec::with_capacity(weights.len());
        let mut features = Vec::with_capacity(weights.len());
        for (i, w) in weights.iter().enumerate() {
            let (smoothed, _) = smooth(w, smooth_restarts, mix(seed, i as u64))?;
            features.push(encoder.encode(&smoothed)?);
            items.push(smoothed);
        }
        Ok(SupportSet { items, features })
    }

    pub fn k(&self) -> usize {
        self.items.len()
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.items[0].arch
    }
}

/// Fine-tune the diffusion state on the support set: each epoch is one
/// optimizer step over the whole support as a batch. Returns per-epoch
/// losses; `epochs = 0` leaves the state untouched.
pub fn finetune(
    state: &mut TrainState,
    support: &SupportSet,
    epochs: usize,
    encoder: Option<&EquivariantEncoder>,
) -> Result<Vec<StepLosses>> {
    if support.arch() != &state.arch {
        return Err(Error::contract("support architecture does not match diffusion state"));
    }
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let batch: Vec<(&WeightVector, &EquivariantFeature)> =
            support.items.iter().zip(&support.features).collect();
        history.push(train_step(state, &batch, encoder)?);
    }
    Ok(history)
}

/// Subspace disturbance ψ̃ = ψ + γ·ε with ε ~ N(0, I).
pub fn disturb(psi: &EquivariantFeature, gamma: f64, seed: u64) -> Result<EquivariantFeature> {
    if gamma < 0.0 {
        return Err(Error::contract("disturbance gamma must be >= 0"));
    }
    if gamma == 0.0 {
        return Ok(psi.clone());
    }
    let mut rng = rng_stream(mix(seed, 0xD157), 0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let psi = psi.psi.iter().map(|&v| v + gamma * normal.sample(&mut rng)).collect();
    Ok(EquivariantFeature { psi })
}

/// Generate `n` weight vectors: support features are assigned round-robin,
/// each disturbed independently, and each output uses a fresh noise seed.
pub fn generate(
    state: &TrainState,
    support: &SupportSet,
    n: usize,
    gamma: f64,
    seed: u64,
) -> Result<Vec<WeightVector>> {
    let steps = DDIM_DEFAULT_STEPS.min(state.schedule.t_max);
    generate_with_steps(state, support, n, gamma, steps, seed)
}

pub fn generate_with_steps(
    state: &TrainState,
    support: &SupportSet,
    n: usize,
    gamma: f64,
    num_steps: usize,
    seed: u64,
) -> Result<Vec<WeightVector>> {
    if n == 0 {
        return Err(Error::contract("generation needs n >= 1"));
    }
    if support.arch() != &state.arch {
        return Err(Error::contract("support architecture does not match diffusion state"));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let slot = i % support.k();
        let psi = disturb(&support.features[slot], gamma, mix(mix(seed, 1), i as u64))?;
        let mut w = ddim_sample(state, &psi, num_steps, 0.0, mix(mix(seed, 2), i as u64))?;
        w.class_label = support.items[slot].class_label.clone();
        out.push(w);
    }
    Ok(out)
}
