use thiserror::Error;

/// Errors raised by the estimation, design and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("curves are sampled on different grids")]
    GridMismatch,
    #[error("grid has {0} points, at least 3 are needed for differentiation")]
    InsufficientGrid(usize),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no sample curve carries positive kernel weight at bandwidth {h}")]
    EmptyNeighborhood { h: f64 },
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("design is ill-conditioned: cond(H^T H) = {condition:e} exceeds cap {cap:e}")]
    IllConditionedDesign { condition: f64, cap: f64 },
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("adaptive quadrature did not converge on [{a}, {b}]")]
    QuadratureNonConvergence { a: f64, b: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("all {0} replications failed")]
    ExperimentFailed(usize),
    #[error("degenerate distribution: {0}")]
    Degenerate(String),
    #[error("unknown table id {0}")]
    UnknownTable(u32),
}

impl Error {
    /// Stable snake_case identifier, used for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvalidCurve(_) => "invalid_curve",
            Error::GridMismatch => "grid_mismatch",
            Error::InsufficientGrid(_) => "insufficient_grid",
            Error::InvalidSample(_) => "invalid_sample",
            Error::UnknownKernel(_) => "unknown_kernel",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::EmptyNeighborhood { .. } => "empty_neighborhood",
            Error::SingularDesign => "singular_design",
            Error::IllConditionedDesign { .. } => "ill_conditioned_design",
            Error::DegenerateDesign(_) => "degenerate_design",
            Error::InvalidDesign(_) => "invalid_design",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::QuadratureNonConvergence { .. } => "quadrature_non_convergence",
            Error::InvalidConfig(_) => "invalid_config",
            Error::ExperimentFailed(_) => "experiment_failed",
            Error::Degenerate(_) => "degenerate",
            Error::UnknownTable(_) => "unknown_table",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
