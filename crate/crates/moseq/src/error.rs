use std::fmt;

/// Crate-wide error type.
///
/// The variants map onto the CLI exit-code classes: `Config` for invalid
/// options or flag combinations, `Data` for malformed or misaligned input
/// files, `Bundle` for model-file format problems, `Internal` for shape or
/// numeric violations that indicate a bug or a corrupted model.
#[derive(Debug)]
pub enum Error {
    Config(String),
    Data(String),
    Bundle(String),
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Bundle(msg) => write!(f, "bundle error: {msg}"),
            Error::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Data(format!("i/o: {e}"))
    }
}
