use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("assembly failed: {0}")]
    Assembly(String),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("rank deficient data: {0}")]
    RankDeficiency(String),
    #[error("degenerate field: {0}")]
    DegenerateField(String),
    #[error("hyper-parameter initialization failed: {0}")]
    InitFailure(String),
    #[error("zero data: {0}")]
    ZeroData(String),
    #[error("degenerate perturbation: {0}")]
    DegeneratePerturbation(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("optimization failed: {0}")]
    OptimizationFailure(String),
    #[error("Hessian is not positive definite: {0}")]
    Curvature(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("no sample dataset has been generated")]
    NoData,
    #[error("unsupported view: {0}")]
    UnsupportedView(String),
    #[error("problem too large for dense assembly ({0} unknowns)")]
    TooLarge(usize),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            found,
        })
    }
}
