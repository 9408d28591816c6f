//! Shared error type. Variants mirror the failure modes of the numerical
//! procedures; everything carries enough context to be actionable from a
//! test log.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid continued-fraction input (empty prefix, zero coefficient,
    /// coefficient above the declared bound, ...).
    #[error("invalid continued fraction: {0}")]
    InvalidContinuedFraction(String),

    /// Integer overflow in exact combinatorics (prefix too long/too wild
    /// for i128 return times).
    #[error("return-time overflow at index {index}")]
    ReturnTimeOverflow { index: usize },

    /// A family member failed validation (zero out of the disk, |lambda|
    /// != 1, circle restriction not a homeomorphism, ...).
    #[error("invalid Blaschke member: {0}")]
    InvalidMember(String),

    /// Parameter solving failed (non-monotone response, bracket not found,
    /// budget exhausted).
    #[error("lambda solve failed: {0}")]
    SolveFailed(String),

    /// Root finding did not reach the requested residual.
    #[error("root finding stalled: {0}")]
    RootFinding(String),

    /// The declared rotation number is inconsistent with the observed
    /// orbit combinatorics (first-return check failed).
    #[error("rotation mismatch: {0}")]
    RotationMismatch(String),

    /// Evaluation too close to a pole of the rational map.
    #[error("evaluation within {dist:.3e} of pole {pole}")]
    NearPole { pole: num_complex::Complex64, dist: f64 },

    /// The point never escaped: not in the basin of infinity (or budget
    /// too small).
    #[error("orbit did not escape after {0} iterations")]
    NotInBasin(usize),

    /// Ray tracing lost the ray (Newton divergence at some level); the
    /// partial trace is reported alongside.
    #[error("ray trace failed at level {level}: {reason}")]
    RayTrace { level: usize, reason: String },

    /// Inverse-branch continuation hit an unresolvable ambiguity near a
    /// critical point at the working resolution.
    #[error("branch ambiguity during pullback: {0}")]
    BranchAmbiguity(String),

    /// A curve/region construction exceeded its point budget.
    #[error("resolution budget exceeded: {0}")]
    ResolutionExceeded(String),

    /// Grid solver did not converge to the requested residual.
    #[error("grid solve did not converge: {0}")]
    GridSolve(String),

    /// Inconsistent request (mismatched depths, empty sample set, ...).
    #[error("bad request: {0}")]
    BadRequest(String),

    /// Configuration file problems.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
