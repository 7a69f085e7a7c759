use thiserror::Error;

/// Errors raised by the numerical kernels and experiment drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "Lyapunov parameters violate beta_- < 1/T < beta_+ < (1 + 1/(1+2 delta)^2) beta_-: {0}"
    )]
    ParameterConstraint(String),

    #[error("degenerate denominator: |p2 - p1| = {gap:e} is below {threshold:e}")]
    DegenerateDenominator { gap: f64, threshold: f64 },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("trajectory became non-finite at t = {time} ({state})")]
    Diverged { time: f64, state: String },

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("fit failure: {0}")]
    Fit(String),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad inputs rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::ParameterConstraint(_) | Error::Domain(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
