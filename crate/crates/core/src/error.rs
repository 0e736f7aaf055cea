use thiserror::Error;

/// Everything that can go wrong across the crate, from malformed operators to
/// non-convergent fits. Variants carry enough context to act on the failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("tensor factor {index} is not square ({rows}x{cols})")]
    NonSquareFactor { index: usize, rows: usize, cols: usize },

    #[error("tensor factor dimensions multiply to {product}, expected {expected}")]
    FactorProductMismatch { product: usize, expected: usize },

    #[error("matrix is not Hermitian: defect {defect:.3e} exceeds tolerance {tol:.3e}")]
    NotHermitian { defect: f64, tol: f64 },

    #[error("invalid quantum state: {0}")]
    InvalidState(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid operator set: {0}")]
    InvalidSet(String),

    #[error("unknown operator label {0:?}")]
    UnknownLabel(String),

    #[error("missing initial mean for {0:?}; fit a maximum-entropy state over the full set to complete the vector")]
    MissingMean(String),

    #[error("mean value for {label:?} is {value:.6e}, outside the operator spectrum [{min:.6e}, {max:.6e}]")]
    MeanOutOfRange { label: String, value: f64, min: f64, max: f64 },

    #[error("integration aborted at t = {t:.6e}: {what} drifted by {drift:.3e} (limit {limit:.3e})")]
    IntegrationAborted { t: f64, what: String, drift: f64, limit: f64 },

    #[error("multiplier fit did not converge after {iterations} iterations: constraint gap {gap:.3e} (tolerance {tol:.3e})")]
    FitNotConverged { iterations: usize, gap: f64, tol: f64 },

    #[error("exponent spectrum spans {span:.3e}, beyond the overflow-safe limit {limit}; rescale the multipliers")]
    ExponentOverflow { span: f64, limit: f64 },

    #[error("linear algebra backend failure: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),
}

pub type Result<T> = std::result::Result<T, Error>;
