use thiserror::Error;

/// Library-wide error type.
///
/// `Validation` covers malformed or inconsistent input (data, schema, scheme);
/// `Estimation` covers valid input on which the requested quantity does not
/// exist (degenerate designs, empty cells, singular fits). The CLI maps the
/// two to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),
    #[error("estimation: {0}")]
    Estimation(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn estimation(msg: impl Into<String>) -> Self {
        Error::Estimation(msg.into())
    }
}
