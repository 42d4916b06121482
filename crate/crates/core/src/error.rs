use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A caller supplied an argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A text input could not be parsed. `line` is 1-based.
    #[error("line {line}: {message}")]
    Parse {
        line: usize,
        message: String,
        content: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Synthetic scene generation gave up after the retry cap.
    #[error("could not place word {word} after {attempts} consecutive rejections")]
    Placement { word: usize, attempts: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>, content: &str) -> Self {
        Error::Parse {
            line,
            message: message.into(),
            content: content.to_string(),
        }
    }
}
