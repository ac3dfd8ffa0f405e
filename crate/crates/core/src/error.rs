use thiserror::Error;

/// Errors raised by the numeric pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("series has no coefficients left after differentiating {order} times (truncation H = {available})")]
    EmptySeries { order: usize, available: usize },

    #[error("bilateral sum did not converge inside index window [{lo}, {hi}]; last term modulus {last_term:e}")]
    TruncationWindow { lo: i64, hi: i64, last_term: f64 },

    #[error("small divisor {value:e} below spectral gap {gap:e} at h = {h}")]
    SmallDivisor { h: usize, value: f64, gap: f64 },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("h-series tail {tail:e} exceeds tolerance {tol:e}; increase truncation.H")]
    TailNotConverged { tail: f64, tol: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;
