use thiserror::Error;

/// Errors produced by the simulation, integration and verification layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("integrand is not adapted: {0}")]
    NotAdapted(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{count} of {total} paths diverged (first: path {first})")]
    Diverged { count: usize, total: usize, first: usize },

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("gram matrix singular (condition estimate {condition:e}, ridge {ridge:e})")]
    SingularGram { condition: f64, ridge: f64 },

    #[error("ensemble carries no jump records")]
    MissingJumpRecords,

    #[error("integrand not integrable against the truncated Levy measure: {0}")]
    NonIntegrable(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("incompatible energy spec: {0}")]
    IncompatibleSpec(String),

    #[error("solver instability: {0}")]
    Unstable(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("unknown selector `{0}`")]
    UnknownSelector(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { field: field.into(), reason: reason.into() }
    }
}
