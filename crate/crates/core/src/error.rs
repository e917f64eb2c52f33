use thiserror::Error;

/// Library-wide error type. Each variant carries a stable machine-readable
/// code (see [`Error::code`]) surfaced by the CLI on standard error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive mass: {side} type '{label}' has mass {value}")]
    NonPositiveMass {
        side: &'static str,
        label: String,
        value: f64,
    },

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("duplicate type label '{label}' on the {side} side")]
    DuplicateTypeLabel { side: &'static str, label: String },

    #[error("matching violates the margin identities: max residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    InfeasibleMatching { residual: f64, tolerance: f64 },

    #[error("non-finite systematic utility at index {index}")]
    NonFiniteUtility { index: usize },

    #[error("share at index {index} is at the boundary ({value:.3e}); conjugate inversion requires strictly interior shares")]
    BoundaryShares { index: usize, value: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("IPFP requires unit-scale extreme-value heterogeneity on both sides")]
    NotLogit,

    #[error("basis family is numerically rank deficient (rank {rank} < {expected})")]
    RankDeficientBasis { rank: usize, expected: usize },

    #[error("linear system is numerically singular (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("matched mass {mu} is outside (0, min(n, m)) = (0, {bound})")]
    OutOfRangeMatching { mu: f64, bound: f64 },

    #[error("micro draws are not defined for this heterogeneity kind; supply a sampler")]
    UnsupportedDistribution,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    /// Stable error code for machine-readable output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonPositiveMass { .. } => "NON_POSITIVE_MASS",
            Error::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            Error::DuplicateTypeLabel { .. } => "DUPLICATE_TYPE_LABEL",
            Error::InfeasibleMatching { .. } => "INFEASIBLE_MATCHING",
            Error::NonFiniteUtility { .. } => "NON_FINITE_UTILITY",
            Error::BoundaryShares { .. } => "BOUNDARY_SHARES",
            Error::NoConvergence { .. } => "NO_CONVERGENCE",
            Error::NotLogit => "NOT_LOGIT",
            Error::RankDeficientBasis { .. } => "RANK_DEFICIENT_BASIS",
            Error::SingularSystem { .. } => "SINGULAR_SYSTEM",
            Error::OutOfRangeMatching { .. } => "OUT_OF_RANGE_MATCHING",
            Error::UnsupportedDistribution => "UNSUPPORTED_DISTRIBUTION",
            Error::InvalidParameter(_) => "INVALID_PARAMETER",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
