use thiserror::Error;

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The normal matrix has no usable pivot, or factorization produced a non-finite value.
    #[error("weighted normal matrix is singular ({0})")]
    SingularSystem(String),

    #[error("demand is not reachable: ||Ax - b|| = {residual:e} exceeds tolerance {tolerance:e}")]
    InfeasibleDemand { residual: f64, tolerance: f64 },

    /// The extra constraint row lies in the row space of the base constraints.
    #[error("augmented constraint direction is degenerate")]
    DegenerateDirection,

    #[error("iteration budget of {0} exhausted")]
    IterationBudgetExceeded(usize),

    #[error("binary search never retained a primal solution")]
    SearchCollapsed,

    #[error("refinement did not converge within {0} residual calls")]
    NonConvergence(usize),

    #[error("dual solution has vanishing objective; cannot recover a primal point")]
    DualDegenerate,

    #[error("graph stayed disconnected after {0} attempts")]
    GraphDisconnected(usize),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("no usable rows remain after cleaning")]
    EmptyAfterCleaning,

    #[error("empty input")]
    EmptyInput,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
