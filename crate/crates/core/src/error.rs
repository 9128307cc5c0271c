//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("point lies outside the domain (margin {margin:.6e})")]
    OutsideDomain { margin: f64 },

    #[error("evaluation failed: {0}")]
    Eval(String),

    #[error("path endpoint at t = {t} is singular; the path is not admissible")]
    SingularEndpoint { t: f64 },

    #[error("slice map vanishes on the box boundary near {location:?}")]
    BoundaryZero { location: Vec<f64> },

    #[error("degenerate zero near {location:?}; shift the target to a nearby regular value")]
    DegenerateZero { location: Vec<f64> },

    #[error("not a zero: residual norm {residual:.6e} exceeds {tol:.6e}")]
    NotAZero { residual: f64, tol: f64 },

    #[error("singular state Jacobian at lambda = {lambda}; route through the singular module")]
    SingularJacobian { lambda: f64 },

    #[error("rank-deficient total Jacobian at lambda = {lambda}")]
    RankDeficient { lambda: f64 },

    #[error("kernel dimension {dim} unsupported; only one-dimensional kernels are handled")]
    UnsupportedKernelDim { dim: usize },

    #[error("reduction failed: {0}")]
    ReductionFailed(String),

    #[error("inner solve for the implicit complement map failed ({0}); trust radius too large")]
    TrustRegion(String),

    #[error("no sign change on the local patch; the zero appears isolated")]
    IsolatedPoint,

    #[error("ambiguous half-branch pairing; candidate indices {candidates:?}")]
    AmbiguousPairing { candidates: Vec<usize> },

    #[error("bracket error: {0}")]
    Bracket(String),

    #[error("refinement failed: {0}")]
    Refine(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
