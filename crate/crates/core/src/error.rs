use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not conform.
    DimensionMismatch {
        op: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// A NaN or infinity appeared in the result of `op`.
    NonFinite { op: &'static str },
    /// A network state went non-finite while propagating through `layer`.
    NonFiniteState { layer: usize },
    /// Training produced a non-finite loss at the given optimizer iteration.
    Diverged { iteration: usize },
    /// An iterative method ran out of iterations.
    NoConvergence {
        op: &'static str,
        iterations: usize,
        residual: f64,
        last: f64,
    },
    LabelOutOfRange { label: usize, classes: usize },
    InvalidArgument(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { op, expected, found } => write!(
                f,
                "{op}: dimension mismatch (expected {}x{}, found {}x{})",
                expected.0, expected.1, found.0, found.1
            ),
            Error::NonFinite { op } => write!(f, "{op}: result contains non-finite entries"),
            Error::NonFiniteState { layer } => {
                write!(f, "non-finite state produced by layer {layer}")
            }
            Error::Diverged { iteration } => {
                write!(f, "training diverged: non-finite loss at iteration {iteration}")
            }
            Error::NoConvergence {
                op,
                iterations,
                residual,
                last,
            } => write!(
                f,
                "{op}: no convergence after {iterations} iterations (residual {residual:e}, last iterate {last:e})"
            ),
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
