use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid layer spec at layer {index}: {reason}")]
    InvalidLayer { index: usize, reason: String },

    #[error("tape does not belong to this forward pass: {0}")]
    TapeMismatch(String),

    #[error("unknown task id {task_id} (network has {num_tasks} task heads)")]
    UnknownTask { task_id: usize, num_tasks: usize },

    #[error("invalid filter vector: {0}")]
    InvalidFilter(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("replay holds no eligible snippet of length {length}; wait for more data")]
    InsufficientData { length: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("config error at line {line}, column {column}: {message}")]
    Config {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("episode log: {0}")]
    EpisodeLog(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
