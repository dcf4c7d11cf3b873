use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("series truncated after {terms} terms (partial sum {partial}, last term {last})")]
    Truncation { terms: usize, partial: f64, last: f64 },
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("pole: {0}")]
    Pole(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("domain construction: {0}")]
    Construction(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("exploration failure: {0}")]
    Exploration(String),
    #[error("statistics: {0}")]
    Stats(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("fixture: {0}")]
    Fixture(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
