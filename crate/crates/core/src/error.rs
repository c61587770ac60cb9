use thiserror::Error;

/// Failure modes shared by every module.
///
/// The CLI maps `Input` to exit code 2 and every other variant to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("integration diverged at t = {t}: {reason}")]
    Divergence {
        t: f64,
        reason: String,
        /// Last state that was accepted by the step controller.
        last_state: Vec<f64>,
    },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("monodromy of M^T M is too ill-conditioned (cond = {cond:e}); precondition with a similarity first")]
    PreconditioningRequired { cond: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn is_input(&self) -> bool {
        matches!(self, Error::Input(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
