use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("face {0} does not belong to this domain")]
    UnknownFace(String),

    #[error("coefficient specification rejected: {0}")]
    InvalidCoefficients(String),

    #[error("standing assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("derivative index {0} out of range")]
    DerivativeIndex(usize),

    #[error("weight function gradient vanishes at {0:?}")]
    DegenerateWeight([f64; 2]),

    #[error("bracket evaluation inconsistent: imaginary residual {residual:e} exceeds tolerance")]
    BracketResidual { residual: f64 },

    #[error("singular time-step matrix at level {level}")]
    SingularStep { level: usize },

    #[error("field violates the homogeneous Dirichlet condition (max boundary value {0:e})")]
    DirichletViolated(f64),

    #[error("source factor vanishes on the grid (min |R| = {0:e})")]
    VanishingFactor(f64),

    #[error("unknown {kind} `{name}`; available: {available}")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("invalid parameter `{key}` for {owner}: {reason}")]
    InvalidParameter {
        owner: String,
        key: String,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
