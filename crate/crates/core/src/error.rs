use alloc::string::String;

/// Errors raised by the kinematic model, barrier, estimator and analyses.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("edge {edge} is degenerate (length {length:e} m)")]
    DegenerateEdge { edge: usize, length: f64 },

    #[error("requested edge rates violate loop closure (residual {residual:e})")]
    InfeasibleEdgeRates { residual: f64 },

    #[error("unknown vertex {0}")]
    UnknownVertex(usize),

    #[error("unknown roller {0}")]
    UnknownRoller(usize),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rigidity barrier is negative at the starting configuration (h = {h:e})")]
    InitializationUnsafe { h: f64 },

    #[error("augmented rigidity matrix is singular")]
    SingularAugmentedMatrix,

    #[error("constant-perimeter projection did not converge (residual {residual:e})")]
    ProjectionDiverged { residual: f64 },

    #[error("encoder timestamps are not strictly increasing")]
    NonmonotonicTime,

    #[error("trace is empty")]
    EmptyTrace,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
