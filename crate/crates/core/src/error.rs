//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while building spaces, rules, or operators.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A coordinate vector had the wrong length for the ambient dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A point was at or outside the boundary of the open unit ball.
    #[error("point outside the open unit ball: |z|^2 = {norm_sqr}")]
    OutsideBall { norm_sqr: f64 },

    /// A point was too close to the boundary for the requested operation.
    #[error("point too close to the boundary: |z| = {abs} exceeds 1 - {margin:e}")]
    BoundaryProximity { abs: f64, margin: f64 },

    /// Only complex dimensions 1 and 2 are implemented.
    #[error("unsupported complex dimension n = {0} (supported: 1, 2)")]
    UnsupportedDimension(usize),

    /// Invalid space parameters (weight exponent, matrix size).
    #[error("invalid space parameters: {0}")]
    InvalidParams(String),

    /// Quadrature resolution below the minimum needed for the scheme.
    #[error("resolution {got} too small: need at least {min}")]
    ResolutionTooSmall { got: usize, min: usize },

    /// A quadrature rule could not certify the requested accuracy.
    #[error("quadrature instability: {context} (estimated error {est_error:e})")]
    QuadratureInstability { context: String, est_error: f64 },

    /// Numerically computed monomial norms disagree with the closed form.
    #[error("monomial norm for degree {degree} off by {deviation:e} (allowed {allowed:e})")]
    GammaDeviation {
        degree: usize,
        deviation: f64,
        allowed: f64,
    },

    /// The numerical Gram matrix of the basis is not the identity.
    #[error("basis Gram matrix deviates from identity by {residual:e} (allowed {allowed:e}); quadrature is insufficient for this truncation")]
    GramDeviation { residual: f64, allowed: f64 },

    /// Kernel expansion tail at this point exceeds the trusted threshold.
    #[error("kernel tail bound {tail:e} beyond truncation degree {degree} exceeds {allowed:e}; increase the truncation degree")]
    TailBound {
        tail: f64,
        degree: usize,
        allowed: f64,
    },

    /// Two objects built over different spaces or parameter sets were mixed.
    #[error("incompatible operands: {0}")]
    Incompatible(String),

    /// Parameters for the Schur-test bound are outside the admissible region.
    #[error("invalid Schur-test parameters: {0}")]
    InvalidSchurParams(String),

    /// An expression referenced a symbol id absent from the catalog.
    #[error("unknown symbol id {0:?} in expression")]
    UnknownSymbol(String),

    /// Malformed operator-expression or symbol description.
    #[error("invalid expression: {0}")]
    InvalidExpression(String),

    /// A computation produced a non-finite value.
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
