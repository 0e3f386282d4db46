use std::io;

use thiserror::Error;

/// Errors raised by the engines, the analysis layer and the run I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error in `{field}`: {reason}")]
    Domain { field: &'static str, reason: String },

    #[error("basis of {basis_size} Fock states keeps only {kept:.3e} of the norm; at least {required} states are needed")]
    BasisTooSmall {
        basis_size: usize,
        kept: f64,
        required: usize,
    },

    #[error("basis truncation at tau = {tau}: tail mass {tail_mass:.3e} exceeds {threshold:.1e}")]
    Truncation {
        tau: f64,
        tail_mass: f64,
        threshold: f64,
    },

    #[error("step size underflow at tau = {tau} (h = {step:.3e})")]
    StepUnderflow { tau: f64, step: f64 },

    #[error("step budget of {max_steps} exhausted at tau = {tau}")]
    StepBudget { tau: f64, max_steps: u64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("config error at line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("snapshot stream format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            field,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical health checks (truncation, step control).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Truncation { .. }
                | Error::StepUnderflow { .. }
                | Error::StepBudget { .. }
                | Error::BasisTooSmall { .. }
        )
    }

    /// True for errors that come from configuration or preset lookup.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::UnknownPreset(_) | Error::Domain { .. } | Error::Precondition(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
