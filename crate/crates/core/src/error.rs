use std::fmt;

/// Errors raised across the crate.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes are incompatible for the named op.
    Shape {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    /// A NaN or infinity appeared at an op boundary.
    NonFinite { op: &'static str, node: usize },
    /// A caller-side precondition was violated.
    Contract(String),
    /// A node or parameter handle does not belong to the graph.
    Lookup(String),
    /// Invalid configuration value.
    Config(String),
    /// Malformed input file.
    Format(String),
    /// Input file shorter than its header declares.
    Length { expected: usize, actual: usize },
    /// The requested statistic is not defined for this input.
    IllPosed(String),
    /// The oracle game has no transmit, jammer or noise power at all.
    DegenerateGame(String),
    Io(std::io::Error),
    /// A training failure, tagged with where it happened.
    AtStep {
        epoch: usize,
        step: u64,
        source: Box<Error>,
    },
}

impl Error {
    /// True for NaN/Inf failures, including ones wrapped with step context.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite { .. } => true,
            Error::AtStep { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, shapes } => {
                write!(f, "shape mismatch in `{op}`: operand shapes {shapes:?}")
            }
            Error::NonFinite { op, node } => {
                write!(f, "non-finite value produced by `{op}` at node {node}")
            }
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Lookup(msg) => write!(f, "lookup error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Length { expected, actual } => {
                write!(f, "truncated input: expected {expected} bytes, found {actual}")
            }
            Error::IllPosed(msg) => write!(f, "ill-posed: {msg}"),
            Error::DegenerateGame(msg) => write!(f, "degenerate game: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::AtStep { epoch, step, source } => {
                write!(f, "epoch {epoch}, step {step}: {source}")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::AtStep { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
