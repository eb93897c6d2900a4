use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix entry {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },

    #[error("expected {expected} entries for a {rows}x{cols} matrix, got {actual}")]
    BadLength {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },

    #[error("backward root must be 1x1, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },

    #[error("row {row} has norm {norm:e}, below the normalization tolerance")]
    DegenerateRow { row: usize, norm: f64 },

    #[error("points {i} and {j} are {distance:e} apart, below the distance tolerance")]
    DegenerateDistance { i: usize, j: usize, distance: f64 },

    #[error("kernel power s = {s} is not supported here (requires s = 2)")]
    UnsupportedKernel { s: f64 },

    #[error("view {view}: projected row {row} has norm {norm:e}")]
    DegenerateProjection { view: usize, row: usize, norm: f64 },

    #[error("core matrix is singular or ill-conditioned (condition number {condition:e})")]
    SingularCore { condition: f64 },

    #[error("energy became non-finite at iteration {iter}; reduce the learning rate")]
    DivergedEnergy { iter: usize },

    #[error("training loss became non-finite at iteration {iter}")]
    DivergedLoss { iter: usize },

    #[error("Gram-Schmidt collapsed at row {row} (residual norm {norm:e})")]
    GramSchmidtDegenerate { row: usize, norm: f64 },

    #[error("angle preservation bound requires w1.w2 > 0, got cosine {cosine}")]
    RequiresAcuteAngle { cosine: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
