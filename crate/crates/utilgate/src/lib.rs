//! File formats, the tier policy file, the parallel calibration driver and
//! the `utilgate` command-line front end.

use std::io;
use std::path::PathBuf;

use utilgate_core::Error as CoreError;

pub mod cli;
pub mod policy;
pub mod records;
pub mod sweep;
pub mod utct;

pub use crate::utct::FormatError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad or inconsistent command-line flags.
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    InFile { path: PathBuf, source: Box<Error> },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl Error {
    /// 2 for flag errors, 3 for IO and format errors, 4 for shape
    /// mismatches, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Io { .. } | Error::Format { .. } | Error::Parse { .. } => 3,
            Error::InFile { source, .. } => source.exit_code(),
            Error::Core(e) => match e {
                CoreError::InvalidShape(_) | CoreError::ShapeMismatch(_) | CoreError::DTypeMismatch { .. } => 4,
                CoreError::MissingInput(_) => 2,
                _ => 1,
            },
        }
    }
}
