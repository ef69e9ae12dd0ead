use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid mutation model: {0}")]
    InvalidModel(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("sample size {size} exceeds the exact-recursion cap of {cap}")]
    CapExceeded { size: u32, cap: u32 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("proposal assigns zero mass to a move with positive target density at state {state}")]
    SupportViolation { state: String },

    #[error("no backward move available from state {state}")]
    DeadEnd { state: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("HUW table covers sample sizes up to {s_max}, but size {size} was requested; rebuild the table")]
    TableMiss { size: u32, s_max: u32 },

    #[error("quadrature did not converge on [{a}, {b}] (estimated error {error:e})")]
    Quadrature { a: f64, b: f64, error: f64 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}
