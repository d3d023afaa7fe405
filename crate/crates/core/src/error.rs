use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

/// Errors raised by the numeric kernels, training loop, and federation driver.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible.
    Shape(String),
    /// An input lies outside the operation's domain (non-finite entries, ...).
    Domain(String),
    /// An iterative solver hit its sweep cap before converging.
    Convergence { sweeps: usize, residual: f64 },
    /// A forward or backward pass produced a non-finite value.
    Numeric { layer: usize, what: &'static str },
    /// A documented precondition does not hold.
    Precondition(String),
    /// A serialized payload or parameter layout does not match.
    Format { offset: usize, msg: String },
    /// A configuration value is invalid or references something missing.
    Config(String),
    /// A client's local step failed; the round was aborted.
    Client { round: usize, client: usize, source: Box<Error> },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Convergence { sweeps, residual } => {
                write!(f, "no convergence after {sweeps} sweeps (residual {residual:e})")
            }
            Error::Numeric { layer, what } => {
                write!(f, "non-finite {what} at layer {layer}")
            }
            Error::Precondition(msg) => write!(f, "precondition violated: {msg}"),
            Error::Format { offset, msg } => write!(f, "format error at byte {offset}: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Client { round, client, source } => {
                write!(f, "round {round}, client {client}: {source}")
            }
        }
    }
}

impl core::error::Error for Error {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            Error::Client { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}
