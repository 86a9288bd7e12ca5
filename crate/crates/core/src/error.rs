//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape-incompatible operands or architecture/coordinate mismatch.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller violated an API precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// Permutation plan does not match the architecture.
    #[error("plan error: {0}")]
    Plan(String),

    /// Flat weight vector does not match the declared layout.
    #[error("layout error: {0}")]
    Layout(String),

    /// An augmentation is not defined for this architecture.
    #[error("unsupported augmentation: {0}")]
    Unsupported(String),

    /// Training diverged (NaN loss) at the given step.
    #[error("training error: non-finite loss at step {step}")]
    Training { step: usize },

    /// Checkpoint or dataset file could not be decoded.
    #[error("load error in section `{section}`: {reason}")]
    Load { section: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn load(section: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Load { section: section.into(), reason: reason.into() }
    }
}
