use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("quadratic form is negative ({value:e}); the operator is not positive on this field")]
    IndefiniteForm { value: f64 },
    #[error("inadmissible direction: J_n(v) = {value:e} is not positive")]
    InadmissibleDirection { value: f64 },
    #[error("no admissible start: Q_n is nonpositive at every node")]
    NoAdmissibleStart,
    #[error("no start converged (best projected gradient {best_gradient:e})")]
    NotConverged { best_gradient: f64 },
    #[error("assumption (A1) violated: smallest eigenvalue {min_eig:e} is not positive")]
    SpectrumNotPositive { min_eig: f64 },
    #[error("grid too large for dense eigensolve: {nodes} nodes (limit {limit})")]
    GridTooLarge { nodes: usize, limit: usize },
    #[error("shooting bracket [{lo}, {hi}] contains no sign change of the boundary mismatch")]
    NoBracket { lo: f64, hi: f64 },
    #[error("integration blew up at x = {x} for u0 = {u0}")]
    BlowUp { u0: f64, x: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
