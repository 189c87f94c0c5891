//! Crate-wide error type.

use thiserror::Error;

/// Coarse classification used by callers that need to map failures to
/// process exit codes: bad input, a numerical-consistency failure, or a
/// resource budget that was exceeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Numerical,
    Budget,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Parse {
        line: usize,
        col: usize,
        msg: String,
    },

    #[error("unknown gate `{name}` at line {line}, column {col}")]
    UnknownGate {
        name: String,
        line: usize,
        col: usize,
    },

    #[error("qubit index {index} out of range for width {width}")]
    QubitOutOfRange { index: usize, width: usize },

    #[error("invalid gate: {0}")]
    InvalidGate(String),

    #[error("matrix is not unitary (max deviation {deviation:.3e})")]
    NonUnitary { deviation: f64 },

    #[error("parameter slot {slot} is unbound")]
    UnboundParameter { slot: usize },

    #[error("width mismatch: expected {expected}, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },

    #[error("bitstring length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("memory budget exceeded: {required_bytes} bytes required, budget is {budget_bytes}")]
    MemoryBudget {
        required_bytes: u128,
        budget_bytes: u128,
    },

    #[error("path budget exceeded: {paths} Schmidt paths, budget is {budget}")]
    PathBudget { paths: u128, budget: u128 },

    #[error("contraction budget exceeded: estimated cost {cost:.3e}, budget is {budget:.3e}")]
    ContractionBudget { cost: f64, budget: f64 },

    #[error("gate is not in the supported Clifford set: {0}")]
    NonClifford(String),

    #[error("channel is not a Pauli channel")]
    NonPauliChannel,

    #[error("Pauli-transfer eigenvalue {value:.3e} too close to zero to invert")]
    SingularTransfer { value: f64 },

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("observable does not commute with the symmetry operator")]
    NonCommuting,

    #[error("projected sector weight {weight:.3e} is numerically zero")]
    VanishingSector { weight: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("decay fit did not converge after {iterations} iterations")]
    FitNonConvergence {
        iterations: usize,
        points: Vec<(f64, f64)>,
    },

    #[error("optimizer diverged: loss increased for {streak} consecutive steps")]
    Divergence { streak: usize },

    #[error("selected measurement outcome has probability {prob:.3e}, below 1e-12")]
    ProbabilityUnderflow { prob: f64 },

    #[error("numerical consistency failure: {0}")]
    NumericalConsistency(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("linear algebra backend failure: {0}")]
    Linalg(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            MemoryBudget { .. } | PathBudget { .. } | ContractionBudget { .. } => {
                ErrorCategory::Budget
            }
            NumericalConsistency(_)
            | FitNonConvergence { .. }
            | Divergence { .. }
            | ProbabilityUnderflow { .. }
            | SingularMatrix
            | SingularTransfer { .. }
            | RankDeficient
            | Linalg(_) => ErrorCategory::Numerical,
            _ => ErrorCategory::Input,
        }
    }
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
