use thiserror::Error;

/// Errors raised by construction and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("malformed document: {0}")]
    Format(String),

    /// A declared quasi-triangle constant is smaller than what the
    /// distance table requires. The triple is reported as `(i, k, j)` for
    /// the failing inequality `d(i,k) <= a0 (d(i,j) + d(j,k))`.
    #[error(
        "quasi-triangle constant {declared} violated at triple ({i},{k},{j}): \
         d(i,k)/(d(i,j)+d(j,k)) = {ratio}"
    )]
    Certification {
        i: usize,
        k: usize,
        j: usize,
        ratio: f64,
        declared: f64,
    },

    #[error("level or index out of range: {0}")]
    Range(String),

    #[error("symmetric scaling did not converge after {sweeps} sweeps (residual {residual:e})")]
    Convergence { sweeps: usize, residual: f64 },

    #[error("flavor mismatch: {0}")]
    Flavor(String),

    #[error("frame is ill-conditioned: relative residual {residual:e} after {iterations} iterations, lower frame bound estimate {lower_bound:e}")]
    IllConditionedFrame {
        iterations: usize,
        residual: f64,
        lower_bound: f64,
    },

    #[error("incompatible norm request: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
