//! Crate-wide error type.

use std::fmt;

/// Errors produced by any stage of the pipeline.
///
/// Each variant maps to one diagnostic category so that the CLI can report a
/// one-line machine-parsable message and a stable exit code.
#[derive(Debug)]
pub enum Error {
    /// Invalid configuration (bad architecture, unknown width, empty choice set).
    Config(String),
    /// Tensor or buffer shape mismatch.
    Dimension(String),
    /// Dataset problems: empty data, missing class, inconsistent windows.
    Data(String),
    /// Malformed text input (CSV row, config file line).
    Parse(String),
    /// Dataset schema violation (label out of range, wrong column count).
    Schema(String),
    /// Binary or packed-buffer format violation.
    Format(String),
    /// Value outside the representable range of a bit-width.
    Range(String),
    /// Non-finite values or other numeric failures.
    Numeric(String),
    /// Missing or stale internal state (e.g. backward without forward cache).
    State(String),
    /// Model selection could not proceed (e.g. degenerate Pareto front).
    Selection(String),
    /// Lowering to the integer engine failed (overflow, unrepresentable scale).
    Compile(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl Error {
    /// Short machine-parsable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Dimension(_) => "dimension",
            Error::Data(_) => "data",
            Error::Parse(_) => "parse",
            Error::Schema(_) => "schema",
            Error::Format(_) => "format",
            Error::Range(_) => "range",
            Error::Numeric(_) => "numeric",
            Error::State(_) => "state",
            Error::Selection(_) => "selection",
            Error::Compile(_) => "compile",
            Error::Io(_) => "io",
        }
    }

    /// Process exit status for the CLI: 1 usage, 2 data, 3 numeric/training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension(_) => 1,
            Error::Data(_)
            | Error::Parse(_)
            | Error::Schema(_)
            | Error::Format(_)
            | Error::Range(_)
            | Error::Io(_) => 2,
            Error::Numeric(_) | Error::State(_) | Error::Selection(_) | Error::Compile(_) => 3,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io(e) => write!(f, "kind=io msg=\"{e}\""),
            other => {
                let msg = match other {
                    Error::Config(m)
                    | Error::Dimension(m)
                    | Error::Data(m)
                    | Error::Parse(m)
                    | Error::Schema(m)
                    | Error::Format(m)
                    | Error::Range(m)
                    | Error::Numeric(m)
                    | Error::State(m)
                    | Error::Selection(m)
                    | Error::Compile(m) => m,
                    Error::Io(_) => unreachable!(),
                };
                write!(f, "kind={} msg=\"{}\"", other.kind(), msg)
            }
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
