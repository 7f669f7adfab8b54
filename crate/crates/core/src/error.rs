use thiserror::Error;

use crate::device::SegmentSeq;

/// Errors surfaced by the cache engine and its building blocks.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum Error {
    #[error("key must be 1..={max} bytes, got {len}")]
    InvalidKey { len: usize, max: usize },

    #[error("object of {len} bytes exceeds the limit of {limit} bytes")]
    Oversize { len: u64, limit: u64 },

    #[error("truncated or malformed flash record")]
    BadRecord,

    #[error("hash function index {index} out of range (K = {k})")]
    HashIndex { index: usize, k: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("payload of {got} bytes is not one segment ({expected} bytes)")]
    SegmentSize { got: usize, expected: usize },

    #[error("flash device full")]
    DeviceFull,

    #[error("flash device has no live segments")]
    DeviceEmpty,

    #[error("segment {0:?} is not live")]
    DeadSegment(SegmentSeq),

    #[error("read of {len} bytes at offset {offset} exceeds the segment size")]
    ReadRange { offset: usize, len: usize },

    #[error("I/O error: {0}")]
    Io(String),

    #[error("DRAM store has no room for {needed} bytes")]
    NoSpace { needed: u64 },

    #[error("malformed model file: {0}")]
    ModelFormat(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
