use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown event id {0}")]
    UnknownEvent(u32),
    #[error("unsupported connector {0:?}")]
    UnknownConnector(String),
    #[error("caption needs at least two events, got {0}")]
    TooFewEvents(usize),
    #[error("caption segment {0:?} does not name a catalog event")]
    UnparsableSegment(String),
    #[error("no connector phrase found in {0:?}")]
    NoConnector(String),
    #[error("caption mixes forward and inverting connectors: {0:?}")]
    MixedConnectors(String),
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value produced by {0}")]
    Numeric(String),
    #[error("sequence of length {len} exceeds {max} positions")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("record {0} is marked temporal but carries no negative caption")]
    MissingNegative(usize),
    #[error("{0} pool is empty")]
    EmptyPool(&'static str),
}
