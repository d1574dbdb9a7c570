use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box [{0}, {1}, {2}, {3}]: needs finite coordinates with positive extent")]
    InvalidBox(f64, f64, f64, f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("episode {index} is invalid: {}", .violations.join("; "))]
    Validation { index: usize, violations: Vec<String> },

    #[error("degenerate scene: {0}")]
    Degenerate(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { expected: u32, found: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
