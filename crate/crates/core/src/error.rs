use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("gradient root must be a spatially constant scalar node")]
    NonScalarRoot,

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("degenerate network: {0}")]
    DegenerateNetwork(String),

    #[error("linear solver failure: {0}")]
    SolverFailure(String),

    #[error(
        "singular bordered system (|m^T K^-1 m| = {0:e}); lambda is close to an eigenvalue of K"
    )]
    SingularBordering(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown problem id `{0}`")]
    UnknownProblem(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
