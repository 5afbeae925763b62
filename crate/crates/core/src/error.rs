use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the kernels, layers, quantizer and experiment harness.
#[derive(Debug)]
pub enum Error {
    /// Two operands (or an operand and a declared shape) disagree.
    Shape {
        op: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// An index fell outside the domain it addresses.
    Index { index: usize, domain: usize },
    /// A value was outside the accepted range for an argument.
    Argument(String),
    /// An operation was called in a state that does not permit it.
    State(String),
    /// A public operation produced a NaN or infinity.
    NonFinite(&'static str),
    /// Binary payload could not be decoded.
    Decode(String),
    /// Experiment configuration failed validation.
    Config { field: String, message: String },
    /// A runtime accounting or training invariant did not hold.
    Invariant(String),
    Io(std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: (usize, usize), got: (usize, usize)) -> Self {
        Error::Shape { op, expected, got }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Stable machine-readable kind, used by the CLI error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Index { .. } => "index",
            Error::Argument(_) => "argument",
            Error::State(_) => "state",
            Error::NonFinite(_) => "non_finite",
            Error::Decode(_) => "decode",
            Error::Config { .. } => "config",
            Error::Invariant(_) => "invariant",
            Error::Io(_) => "io",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, expected, got } => write!(
                f,
                "{op}: shape mismatch, expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::Index { index, domain } => {
                write!(f, "index {index} out of range for domain {domain}")
            }
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::State(msg) => write!(f, "invalid state: {msg}"),
            Error::NonFinite(op) => write!(f, "{op}: produced a non-finite value"),
            Error::Decode(msg) => write!(f, "decode error: {msg}"),
            Error::Config { field, message } => write!(f, "config field `{field}`: {message}"),
            Error::Invariant(msg) => write!(f, "invariant violated: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
