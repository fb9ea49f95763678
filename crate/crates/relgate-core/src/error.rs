use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by the core engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor shapes incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Axis does not exist for the given rank.
    InvalidAxis { axis: usize, rank: usize },
    /// An index (token id, position, relation slot, label id) is out of range.
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    /// A contract violation: the caller passed something the operation
    /// cannot accept (non-scalar loss, empty pair list, ...).
    Contract(String),
    /// Invalid configuration value.
    Config(String),
    /// Malformed checkpoint bytes.
    Checkpoint(String),
    /// A relation label name not present in the label map.
    UnknownLabel(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::InvalidAxis { axis, rank } => {
                write!(f, "axis {axis} out of range for rank {rank}")
            }
            Error::IndexOutOfRange { what, index, bound } => {
                write!(f, "{what} {index} out of range (bound {bound})")
            }
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Checkpoint(msg) => write!(f, "malformed checkpoint: {msg}"),
            Error::UnknownLabel(name) => write!(f, "unknown relation label: {name:?}"),
        }
    }
}

impl core::error::Error for Error {}
