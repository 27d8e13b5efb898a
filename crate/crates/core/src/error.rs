use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the numeric core and everything built on it.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An operation produced NaN or infinity.
    NonFinite { op: &'static str },
    /// The loss handed to `backward` was not a scalar.
    NonScalarLoss { shape: Vec<usize> },
    /// A vector that must be normalized has zero length.
    ZeroNorm { op: &'static str },
    /// A value violated an operation's precondition.
    Invalid(String),
    /// Not enough data to run the requested protocol.
    InsufficientData(String),
    /// Training produced a non-finite loss or parameter and was stopped.
    Diverged {
        epoch: usize,
        step: usize,
        /// Human-readable state at the time of the abort.
        dump: String,
    },
}

impl Error {
    /// True for failures of the arithmetic itself rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::ZeroNorm { .. } | Error::Diverged { .. })
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::NonFinite { op } => write!(f, "{op}: produced a non-finite value"),
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::ZeroNorm { op } => write!(f, "{op}: zero-norm vector"),
            Error::Invalid(msg) => write!(f, "invalid argument: {msg}"),
            Error::InsufficientData(msg) => write!(f, "insufficient data: {msg}"),
            Error::Diverged { epoch, step, dump } => {
                write!(f, "training diverged at epoch {epoch}, step {step}\n{dump}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
