use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite state for particle {particle} at step {step}")]
    NonFinite { particle: usize, step: usize },

    #[error("Picard iteration did not converge after {} sweeps (last residual {:e})", residuals.len(), residuals.last().copied().unwrap_or(f64::NAN))]
    NonConvergence { residuals: Vec<f64> },

    #[error("CFL condition violated: dt = {dt:e}, largest stable step {suggested_dt:e}")]
    Cfl { dt: f64, suggested_dt: f64 },

    #[error("scheme failure: {0}")]
    Scheme(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("snapshot format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn size(msg: impl Into<String>) -> Self {
        Error::SizeMismatch(msg.into())
    }

    /// True for errors caused by the configuration rather than by a run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse { .. } | Error::Unsupported(_) | Error::Cfl { .. })
    }
}
