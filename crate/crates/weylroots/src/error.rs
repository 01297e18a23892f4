use thiserror::Error;

/// Failure categories surfaced to callers and mapped to CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Resource,
    Numerical,
    Acceptance,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("resource error: {0}")]
    Resource(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("acceptance failure: {0}")]
    Acceptance(String),
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) | Error::Domain(_) => Category::Config,
            Error::Resource(_) => Category::Resource,
            Error::Numerical(_) => Category::Numerical,
            Error::Acceptance(_) => Category::Acceptance,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
