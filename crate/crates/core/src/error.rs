use thiserror::Error;

use crate::group::GroupElement;

/// Crate-wide error type. Operations that can reject their inputs or
/// exhaust a configured budget return `Result<T, Error>`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot parse group spec {0:?}: expected factors like \"Z/4xZ/6\"")]
    ParseGroup(String),

    #[error("dimension mismatch: expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("coordinate {value} out of range for factor of order {order}")]
    CoordinateOutOfRange { value: u64, order: u64 },

    #[error("enumeration cap exceeded: cardinality {needed} > cap {cap}")]
    EnumerationCapExceeded { needed: u128, cap: u128 },

    #[error("work cap exceeded: {needed} elementary steps > cap {cap}")]
    WorkCapExceeded { needed: u128, cap: u128 },

    #[error("radius {rho} out of admissible range: {reason}")]
    RadiusOutOfRange { rho: String, reason: String },

    #[error("function is not 1-bounded: |f({index})| = {magnitude}")]
    NotOneBounded { index: usize, magnitude: f64 },

    #[error("norm gate failed: measured {measured} < required {required}")]
    NormGateFailed { measured: f64, required: f64 },

    #[error("guarantee violated (implementation bug): {0}")]
    GuaranteeViolated(String),

    #[error("not locally bilinear at witness {0}")]
    NotLocallyBilinear(String),

    #[error("form is not symmetric: B({i},{j}) != B({j},{i})")]
    NotSymmetric { i: usize, j: usize },

    #[error(
        "asymmetry too large at x = {x:?}, z = {z:?}: distance {asymmetry} >= 1/10; \
         shrink the Bohr radius and retry"
    )]
    AsymmetryTooLarge {
        x: GroupElement,
        z: GroupElement,
        asymmetry: String,
    },

    #[error("torsion incompatibility: {0}")]
    TorsionIncompatible(String),

    #[error("search exhausted: {0}")]
    SearchExhausted(String),

    #[error("cocycle identity fails at witness {0}")]
    NotACocycle(String),

    #[error("iteration failed to contract (factor {factor} at step {step}); domain density may be too low")]
    ContractionFailure {
        step: usize,
        factor: f64,
        trace: Vec<f64>,
    },

    #[error("domain density {density} below required {required}")]
    DensityTooLow { density: f64, required: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
