use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("box of {sites} sites exceeds the exact-enumeration cap of {cap}")]
    Capacity { sites: usize, cap: usize },

    #[error("site {0} is not a member of the set")]
    NotAMember(usize),

    #[error("site rank {rank} out of range for a box of {len} sites")]
    RankOutOfRange { rank: usize, len: usize },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("decode error: {0}")]
    Decode(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
