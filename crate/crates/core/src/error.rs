use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::importance::NeuronId;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate correlation: one sequence has zero variance")]
    DegenerateCorrelation,

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("neuron {0} is out of range")]
    NeuronOutOfRange(NeuronId),

    #[error("trace is missing {0}")]
    MissingTrace(&'static str),

    #[error("switch index {index} out of bounds for pre-pool size {len}")]
    SwitchOutOfBounds { index: usize, len: usize },

    #[error("dead path: reconstruction for neuron {0} is identically zero")]
    DeadPath(NeuronId),

    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("sample {index}: {source}")]
    Sample { index: usize, source: Box<Error> },
}

impl Error {
    /// True for failures caused by the arithmetic itself rather than by bad
    /// inputs or configuration.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite(_) | Error::Diverged { .. } | Error::DegenerateCorrelation => true,
            Error::Sample { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_sample(self, index: usize) -> Self {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }
}
