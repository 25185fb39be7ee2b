use crate::solver::SolverTrace;

/// Errors produced by the registration model, projections, solvers and diagnostics.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The registration problem is not well posed (for example the clean data
    /// matrix has a nullspace larger than `d`, or a patch overlaps too little).
    #[error("ill-posed configuration: {0}")]
    IllPosed(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("degenerate rank: {0}")]
    DegenerateRank(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// An iterate became non-finite. The partial trace up to the failing
    /// iteration is attached.
    #[error("solver diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        trace: Box<SolverTrace>,
    },

    #[error("trace too short: need at least {needed} records, have {have}")]
    TraceTooShort { needed: usize, have: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
