//! Flat `key=value` run configuration shared by the CLI subcommands.
//!
//! Every pipeline hyperparameter lives here with its reference default;
//! desk-scale runs override the expensive ones (epochs, batch sizes)
//! from a config file or flags. Unknown keys are rejected so typos
//! cannot silently fall back to defaults.

use std::fs;
use std::path::Path;

use crate::diffusion::DenoiserConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::inr::MlpArchitecture;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub arch: String,
    pub seed: u64,

    // encoder + contrastive pre-training
    pub encoder_channels: usize,
    pub encoder_layers: usize,
    pub feature_dim: usize,
    pub head_hidden: usize,
    pub tau: f64,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub pretrain_weight_decay: f64,
    pub use_smoothing: bool,
    pub smooth_restarts: usize,

    // diffusion
    pub t_max: usize,
    pub lambda: f64,
    pub ema_beta: f64,
    pub denoiser_layers: usize,
    pub denoiser_heads: usize,
    pub denoiser_hidden: usize,
    pub diffusion_epochs: usize,
    pub diffusion_batch: usize,
    pub diffusion_lr: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,

    // few-shot adaptation + sampling
    pub k: usize,
    pub gamma: f64,
    pub finetune_epochs: usize,
    pub ddim_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: "mnist".into(),
            seed: 0,
            encoder_channels: 16,
            encoder_layers: 4,
            feature_dim: 128,
            head_hidden: 128,
            tau: 0.5,
            pretrain_epochs: 500,
            pretrain_batch: 512,
            pretrain_lr: 5e-3,
            pretrain_weight_decay: 5e-4,
            use_smoothing: true,
            smooth_restarts: 3,
            t_max: 1000,
            lambda: 0.1,
            ema_beta: 0.99,
            denoiser_layers: 4,
            denoiser_heads: 4,
            denoiser_hidden: 256,
            diffusion_epochs: 5000,
            diffusion_batch: 32,
            diffusion_lr: 2e-4,
            lr_decay_every: 250,
            lr_decay_factor: 0.9,
            k: 10,
            gamma: 0.3,
            finetune_epochs: 250,
            ddim_steps: 50,
        }
    }
}

impl RunConfig {
    /// Parse overrides on top of the defaults. Lines are `key=value`;
    /// blank lines and `#` comments are skipped; unknown keys error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key=value, got `{line}`", i + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("config key `{key}`: bad value `{value}`")))
        }
        match key {
            "arch" => self.arch = value.to_string(),
            "seed" => self.seed = num(key, value)?,
            "encoder_channels" => self.encoder_channels = num(key, value)?,
            "encoder_layers" => self.encoder_layers = num(key, value)?,
            "feature_dim" => self.feature_dim = num(key, value)?,
            "head_hidden" => self.head_hidden = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = num(key, value)?,
            "pretrain_batch" => self.pretrain_batch = num(key, value)?,
            "pretrain_lr" => self.pretrain_lr = num(key, value)?,
            "pretrain_weight_decay" => self.pretrain_weight_decay = num(key, value)?,
            "use_smoothing" => self.use_smoothing = num(key, value)?,
            "smooth_restarts" => self.smooth_restarts = num(key, value)?,
            "t_max" => self.t_max = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "ema_beta" => self.ema_beta = num(key, value)?,
            "denoiser_layers" => self.denoiser_layers = num(key, value)?,
            "denoiser_heads" => self.denoiser_heads = num(key, value)?,
            "denoiser_hidden" => self.denoiser_hidden = num(key, value)?,
            "diffusion_epochs" => self.diffusion_epochs = num(key, value)?,
            "diffusion_batch" => self.diffusion_batch = num(key, value)?,
            "diffusion_lr" => self.diffusion_lr = num(key, value)?,
            "lr_decay_every" => self.lr_decay_every = num(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "finetune_epochs" => self.finetune_epochs = num(key, value)?,
            "ddim_steps" => self.ddim_steps = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Full listing in declaration order; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($($field:ident),+ $(,)?) => {
                $(out.push_str(&format!("{}={}\n", stringify!($field), self.$field));)+
            };
        }
        emit!(
            arch,
            seed,
            encoder_channels,
            encoder_layers,
            feature_dim,
            head_hidden,
            tau,
            pretrain_epochs,
            pretrain_batch,
            pretrain_lr,
            pretrain_weight_decay,
            use_smoothing,
            smooth_restarts,
            t_max,
            lambda,
            ema_beta,
            denoiser_layers,
            denoiser_heads,
            denoiser_hidden,
            diffusion_epochs,
            diffusion_batch,
            diffusion_lr,
            lr_decay_every,
            lr_decay_factor,
            k,
            gamma,
            finetune_epochs,
            ddim_steps,
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: usize) -> Result<()> {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be >= 1")));
            }
            Ok(())
        }
        positive("encoder_channels", self.encoder_channels)?;
        positive("encoder_layers", self.encoder_layers)?;
        positive("feature_dim", self.feature_dim)?;
        positive("head_hidden", self.head_hidden)?;
        positive("pretrain_batch", self.pretrain_batch)?;
        positive("t_max", self.t_max)?;
        positive("denoiser_layers", self.denoiser_layers)?;
        positive("denoiser_heads", self.denoiser_heads)?;
        positive("denoiser_hidden", self.denoiser_hidden)?;
        positive("diffusion_batch", self.diffusion_batch)?;
        positive("k", self.k)?;
        positive("ddim_steps", self.ddim_steps)?;
        if !(self.tau > 0.0) {
            return Err(Error::Config("`tau` must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("`lambda` must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.ema_beta) {
            return Err(Error::Config("`ema_beta` must lie in [0, 1)".into()));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config("`gamma` must be >= 0".into()));
        }
        if self.ddim_steps > self.t_max {
            return Err(Error::Config("`ddim_steps` cannot exceed `t_max`".into()));
        }
        if self.denoiser_hidden % self.denoiser_heads != 0 {
            return Err(Error::Config(
                "`denoiser_hidden` must be divisible by `denoiser_heads`".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn parse_arch(&self) -> Result<MlpArchitecture> {
        MlpArchitecture::parse(&self.arch)
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            channels: self.encoder_channels,
            layers: self.encoder_layers,
            feature_dim: self.feature_dim,
            head_hidden: self.head_hidden,
            tau: self.tau,
        }
    }

    pub fn denoiser_config(&self, arch: &MlpArchitecture) -> DenoiserConfig {
        DenoiserConfig::for_arch(
            arch,
            self.denoiser_layers,
            self.denoiser_heads,
            self.denoiser_hidden,
            self.feature_dim,
        )
    }
}
