use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("reducible generator: states {isolated:?} do not communicate with state 0")]
    Reducible { isolated: Vec<usize> },

    #[error("stability violated: {0}")]
    Unstable(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("malformed busy-period path: {0}")]
    MalformedPath(String),

    #[error("fit failure: {0}")]
    Fit(String),

    #[error("unknown method tag `{0}`")]
    UnknownMethod(String),

    #[error("missing coefficient part `{0}`")]
    MissingPart(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
