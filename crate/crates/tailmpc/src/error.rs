//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corrupt log: {0}")]
    CorruptLog(String),

    #[error("series too short: need at least {need} samples, got {got}")]
    SeriesTooShort { need: usize, got: usize },

    #[error("invalid filter window {0}: must be odd, >= 1, and <= series length")]
    InvalidWindow(usize),

    #[error("dataset is empty or split {0} has no samples")]
    EmptyDataset(&'static str),

    #[error("regressor has no excitation ({0})")]
    NoExcitation(String),

    #[error("degenerate normalization range on channel {0}")]
    DegenerateChannel(usize),

    #[error("model file invalid: {0}")]
    ModelFile(String),

    #[error("training failed: {0}")]
    TrainingFailed(String),

    #[error("QP hessian is not positive definite")]
    QpNotPositiveDefinite,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("simulation diverged at t = {t:.2} s, |p| = {pos_norm:.1} m")]
    Diverged { t: f64, pos_norm: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
