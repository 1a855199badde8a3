use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("step ratio diverges: slow exponent {slow} is below fast exponent {fast}")]
    DivergentRatio { slow: f64, fast: f64 },

    #[error("matrix has non-finite entries")]
    NonFinite,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("Sylvester pencil is numerically singular (shared eigenvalue between A and -B)")]
    SingularPencil,

    #[error("eigenvalue iteration did not converge")]
    EigenNoConvergence,

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("A22 is singular or ill-conditioned (condition number {condition:e})")]
    SingularA22 { condition: f64 },

    #[error("block system matrix is singular")]
    SingularSystem,

    #[error("reduced matrix Delta is singular")]
    SingularDelta,

    #[error("matrix {0} is not Hurwitz")]
    NotHurwitz(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("transformation step {k} is singular (I - beta_k B11 not invertible); start index too small")]
    SingularStep { k: u64 },

    #[error("iterate diverged at step {k} (norm {norm:e})")]
    Diverged { k: u64, norm: f64 },

    #[error("replica {replica} diverged at step {k}")]
    ReplicaDiverged { replica: u64, k: u64 },

    #[error("insufficient samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("predicted covariance is singular")]
    SingularPrediction,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
