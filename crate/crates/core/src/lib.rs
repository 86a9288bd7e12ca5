//! Few-shot generation of implicit neural representation weights.
//!
//! The pipeline: fit SIREN-style MLPs to signals, canonicalize their weights
//! under neuron permutation symmetry ([`symmetry`]), embed them with a
//! permutation-equivariant contrastive encoder ([`encoder`]), train a
//! feature-conditioned diffusion model over flattened weights ([`diffusion`]),
//! and adapt to new categories from a handful of examples ([`fewshot`]).

pub mod augment;
pub mod config;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod fewshot;
pub mod inr;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod persist;
pub mod rng;
pub mod symmetry;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
