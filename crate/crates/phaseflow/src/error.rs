use thiserror::Error;

/// Errors raised by the solver stack and the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("material model rejected: {0}")]
    Model(String),

    #[error("field shape mismatch: {0}")]
    Shape(String),

    #[error("transform gate violated: {0}")]
    Gate(String),

    #[error("fixed-point iteration failed: {0}")]
    Contraction(String),

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("initial data incompatible: {0}")]
    Compatibility(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Gate(_) | Error::Contraction(_) | Error::Solver(_) => 2,
            Error::ConfigParse { .. }
            | Error::Config(_)
            | Error::Model(_)
            | Error::Compatibility(_) => 3,
            Error::Shape(_) | Error::Format(_) | Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
