use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(&'static str),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("operator is not selfadjoint in the weighted inner product: {0}")]
    NotSelfadjoint(&'static str),

    #[error("singular operator: {0}")]
    Singular(&'static str),

    #[error("rank-one update denominator {0:e} is numerically zero")]
    SingularUpdate(f64),

    #[error("noise standard deviation sigma[{index}] = {value} must be positive and finite")]
    NonPositiveSigma { index: usize, value: f64 },

    #[error("candidate index {index} out of range (n_s = {n_s})")]
    IndexOutOfRange { index: usize, n_s: usize },

    #[error("candidate index {0} appears more than once")]
    DuplicateIndex(usize),

    #[error("candidate {0} is inactive (zero row in the forward map)")]
    InactiveCandidate(usize),

    #[error("budget {k} exceeds the {active} active candidates")]
    BudgetTooLarge { k: usize, active: usize },

    #[error("exhaustive search needs {subsets} subsets, above the cap of {cap}")]
    CapExceeded { subsets: u128, cap: u128 },

    #[error("reports refer to different problems or budgets")]
    ReportMismatch,

    #[error("greedy ratio {ratio} is below the floor {floor}")]
    BoundViolated { ratio: f64, floor: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
