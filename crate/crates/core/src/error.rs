use std::fmt;
use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    Dimension(String),
    /// A non-finite value appeared in a forward result or integrator state.
    Numeric(String),
    /// An index (token id, class target, block number) is out of range.
    Index(String),
    /// A caller violated an API precondition.
    Contract(String),
    /// A fixed-capacity encoder was asked for more positions than it holds.
    Capacity { requested: usize, max: usize },
    /// Checkpoint surgery found incompatible tensors.
    Surgery(Vec<String>),
    /// Training produced a non-finite loss.
    Divergence { step: usize, loss: f64 },
    /// Malformed config or checkpoint content.
    Parse(String),
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Index(m) => write!(f, "index error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::Capacity { requested, max } => write!(
                f,
                "capacity error: {requested} positions requested but the table holds {max}"
            ),
            Error::Surgery(names) => {
                write!(f, "surgery error: incompatible tensors: {}", names.join(", "))
            }
            Error::Divergence { step, loss } => {
                write!(f, "training diverged at step {step} (loss = {loss})")
            }
            Error::Parse(m) => write!(f, "parse error: {m}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
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
