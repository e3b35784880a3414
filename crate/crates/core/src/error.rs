use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("cannot parse expression `{src}`: {msg}")]
    Parse { src: String, msg: String },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("direction is not a unit vector (|omega| = {norm})")]
    NotUnit { norm: f64 },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("linear solve failed at time step {step}: {msg}")]
    Solver { step: usize, msg: String },

    #[error("frequency outside the admissible set: {0}")]
    Cone(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
