use std::io;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input text; `line` is 1-based.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Input that parsed but is inconsistent (shape or count mismatch).
    #[error("invalid data: {0}")]
    Data(String),

    /// Bad configuration or argument value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A NaN or infinity showed up in the named quantity.
    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
