//! Error type shared by the whole crate.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Operand shapes disagree (volume vs mask, mask vs mask, ...).
    DimensionMismatch { expected: [usize; 3], got: [usize; 3] },
    /// A constructor or operation was handed an unusable argument.
    InvalidParameter(String),
    /// A mask has no boundary to measure distances against, or a geometric
    /// stage received degenerate input (coplanar points, empty cloud where
    /// one is required, ...).
    DegenerateInput(String),
    /// A pipeline stage failed; carries the stage name for diagnosis.
    Stage { stage: &'static str, source: Box<Error> },
    /// File format violation: bad sidecar, payload length mismatch, ...
    Format(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }

    pub fn invalid(msg: impl Into<String>) -> Error {
        Error::InvalidParameter(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Error {
        Error::DegenerateInput(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Error {
        Error::Format(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected:?}, got {got:?}")
            }
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::DegenerateInput(msg) => write!(f, "degenerate input: {msg}"),
            Error::Stage { stage, source } => write!(f, "stage {stage}: {source}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Stage { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
