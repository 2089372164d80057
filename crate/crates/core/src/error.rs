use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate block {block}: A_i has no nonzero singular value")]
    DegenerateBlock { block: usize },

    #[error("inconsistent row {row} in block {block}: zero coefficients with nonzero right-hand side {rhs}")]
    InconsistentRow { block: usize, row: usize, rhs: f64 },

    #[error("step size out of range for block {block}: theta = {theta}, admissible interval is (0, {upper})")]
    StepSizeOutOfRange { block: usize, theta: f64, upper: f64 },

    #[error("beta must lie strictly inside (0, 1), got {0}")]
    BetaOutOfRange(f64),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph index {index} out of range for a universe of {len} graphs")]
    BadGraphIndex { index: usize, len: usize },

    #[error("invalid process: {0}")]
    InvalidProcess(String),

    #[error("unmodeled activation: edge ({0}, {1}) has no matching per-edge graph in the universe")]
    UnmodeledActivation(usize, usize),

    #[error("internal consistency: {0}")]
    InternalConsistency(String),

    #[error("numerical divergence at iteration {0}: non-finite state")]
    NumericalDivergence(usize),

    #[error("infeasible: Assumption 3 violated, least-squares constraint residual {residual:e}")]
    Infeasible { residual: f64 },

    #[error("window beyond convergence: {0}")]
    WindowBeyondConvergence(String),

    #[error("invalid run configuration: {0}")]
    InvalidRun(String),
}

pub type Result<T> = std::result::Result<T, Error>;
