use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the core library.
///
/// `Validation` errors mean the caller handed us something malformed
/// (bad shapes, out-of-range factors, inconsistent config). Together with
/// missing input files they count as bad input; everything else is a
/// runtime failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("maximum number of solver steps ({max_steps}) exceeded at t = {t}")]
    MaxStepsExceeded { t: f64, max_steps: usize },

    #[error("non-finite derivative encountered at t = {t}")]
    NonFiniteDerivative { t: f64 },

    #[error("covariance is not positive semi-definite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },

    #[error("text encoder adapter unavailable: {0}")]
    AdapterUnavailable(String),

    #[error("non-finite loss at step {step}: {components}")]
    NonFiniteLoss { step: usize, components: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Validation(_) | Error::Config(_) | Error::AdapterUnavailable(_) => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
