use std::fmt;
use std::io;
use std::path::PathBuf;

/// Everything that can go wrong in this crate.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes do not compose.
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A backward pass ran without the forward cache it depends on.
    MissingCache(&'static str),
    /// An argument was outside its documented domain.
    Argument(String),
    /// A configuration value is invalid or unknown.
    Config(String),
    /// A file did not match its expected layout.
    Format { path: Option<PathBuf>, field: String },
    /// A numeric routine failed to converge.
    Numeric(String),
    /// The training cost became NaN or infinite.
    NonFinite {
        epoch: usize,
        batch: usize,
        layer: Option<usize>,
    },
    Io { path: Option<PathBuf>, source: io::Error },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn format(path: Option<&std::path::Path>, field: impl Into<String>) -> Self {
        Error::Format {
            path: path.map(|p| p.to_path_buf()),
            field: field.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: Some(path.into()),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::MissingCache(layer) => {
                write!(f, "{layer}: backward called without a matching forward pass")
            }
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Format { path, field } => match path {
                Some(p) => write!(f, "{}: malformed {field}", p.display()),
                None => write!(f, "malformed {field}"),
            },
            Error::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            Error::NonFinite {
                epoch,
                batch,
                layer,
            } => {
                write!(f, "non-finite training cost at epoch {epoch}, batch {batch}")?;
                if let Some(l) = layer {
                    write!(f, " (first non-finite activation in layer {l})")?;
                }
                Ok(())
            }
            Error::Io { path, source } => match path {
                Some(p) => write!(f, "{}: {source}", p.display()),
                None => write!(f, "{source}"),
            },
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(source: io::Error) -> Self {
        Error::Io { path: None, source }
    }
}
