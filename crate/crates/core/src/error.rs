use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid coordinate: {0}")]
    InvalidPoint(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("eigen-space E_{k}{sign} has an empty null space")]
    EmptyNullSpace { k: usize, sign: char },
    #[error("input is not an eigenfield: residual {residual:.3e}")]
    NotEigen { residual: f64 },
    #[error("form norms differ: {0:.6e} vs {1:.6e}")]
    NormMismatch(f64, f64),
    #[error("forms have different duality signs")]
    MixedDuality,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("form is not closed: |d alpha| = {residual:.3e} exceeds {tolerance:.3e}")]
    NotClosed { residual: f64, tolerance: f64 },
    #[error("form is not co-closed: |d* psi| = {residual:.3e} exceeds {tolerance:.3e}")]
    NotCoClosed { residual: f64, tolerance: f64 },
    #[error("form is not admissible: Hopf invariant {q:.6e} is not positive")]
    Inadmissible { q: f64 },
    #[error("coupling must be positive, got {0}")]
    NonPositiveCoupling(f64),
    #[error("inconsistent lift triple: {0}")]
    InconsistentTriple(String),
    #[error("non-finite energy at iteration {iteration}")]
    NonFiniteEnergy { iteration: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown map spec `{0}`")]
    UnknownMap(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
