use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("agent {agent} failed: {message}")]
    Agent { agent: usize, message: String },

    #[error("master problem failed: {0}")]
    Master(String),

    #[error("structured function has an empty domain")]
    EmptyDomain,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("instance error at {path}: {message}")]
    Instance { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
