use std::fmt;
use std::io;

/// Errors raised by the numerics, model, data and training layers.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes are incompatible.
    Dimension(String),
    /// An operation required a different tensor rank.
    Rank { expected: usize, got: Vec<usize> },
    /// A caller broke an operation's contract (wrong mode, non-scalar root, ...).
    Contract(String),
    /// A NaN or infinity crossed an op boundary.
    NonFinite(&'static str),
    /// Polynomial basis parameters are out of range.
    BasisParameter(String),
    /// Invalid model, training or run configuration.
    Config(String),
    /// Failure while reading a dataset.
    Load(LoadError),
    /// Malformed or incompatible checkpoint.
    Checkpoint(String),
    Io(io::Error),
}

/// Distinct dataset load failures.
#[derive(Debug)]
pub enum LoadError {
    Missing(String),
    Ragged { line: usize, expected: usize, got: usize },
    NonNumeric { line: usize, column: String, value: String },
    NonMonotone { line: usize },
    BadTimestamp { line: usize, value: String },
    TooFewColumns(usize),
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Rank { expected, got } => {
                write!(f, "rank error: expected rank {expected}, got shape {got:?}")
            }
            Error::Contract(msg) => write!(f, "contract error: {msg}"),
            Error::NonFinite(op) => write!(f, "non-finite value produced by `{op}`"),
            Error::BasisParameter(msg) => write!(f, "basis parameter error: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Load(e) => write!(f, "load error: {e}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Missing(path) => write!(f, "dataset file not found: {path}"),
            LoadError::Ragged { line, expected, got } => {
                write!(f, "line {line}: expected {expected} fields, found {got}")
            }
            LoadError::NonNumeric { line, column, value } => {
                write!(f, "line {line}: column `{column}` is not numeric: {value:?}")
            }
            LoadError::NonMonotone { line } => {
                write!(f, "line {line}: timestamps are not strictly increasing")
            }
            LoadError::BadTimestamp { line, value } => {
                write!(f, "line {line}: unparseable timestamp {value:?}")
            }
            LoadError::TooFewColumns(n) => {
                write!(f, "need a timestamp column plus at least one feature, found {n} columns")
            }
            LoadError::Parse(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<LoadError> for Error {
    fn from(e: LoadError) -> Self {
        Error::Load(e)
    }
}
