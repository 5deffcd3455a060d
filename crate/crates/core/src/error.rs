//! Crate-wide error type.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Failures surfaced by the numerics substrate, model stack, data
/// generators, and trainer.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands with incompatible shapes, named after the operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An axis argument outside the operand's rank.
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    /// `backward` called on a non-scalar value.
    NonScalarLoss { shape: Vec<usize> },
    /// An operation received an empty input it cannot accept.
    EmptyInput { what: &'static str },
    /// A gradient or update became NaN/inf; carries the parameter name.
    NonFinite { what: String },
    /// Invalid configuration or argument, with context.
    Invalid { what: String },
    /// Text that cannot be tokenized against the synthetic vocabulary.
    UnknownToken { token: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid { what: msg.into() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch between {lhs:?} and {rhs:?}")
            }
            Error::InvalidAxis { op, axis, rank } => {
                write!(f, "{op}: axis {axis} out of range for rank {rank}")
            }
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::EmptyInput { what } => write!(f, "{what}: empty input"),
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::Invalid { what } => write!(f, "{what}"),
            Error::UnknownToken { token } => write!(f, "token not in vocabulary: {token:?}"),
        }
    }
}

impl core::error::Error for Error {}
