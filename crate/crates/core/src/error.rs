use thiserror::Error;

/// Errors raised by grid construction, operators and solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StokesError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("zero diagonal entry in {0} relaxation")]
    ZeroDiagonal(&'static str),
    #[error("incompatible boundary data: net boundary inflow {flux:e} does not match divergence source {expected:e}")]
    IncompatibleBoundary { flux: f64, expected: f64 },
    #[error("dense problem has {dofs} unknowns, above the cap of {cap}")]
    TooLarge { dofs: usize, cap: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("singular operator: {0}")]
    Singular(String),
    #[error("a pressure multigrid hierarchy is required when theta > 0")]
    MissingHierarchy,
}

pub type Result<T> = std::result::Result<T, StokesError>;
