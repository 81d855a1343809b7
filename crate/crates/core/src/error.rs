use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("data length {actual} does not match dims product {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value at flat index {index}")]
    NonFiniteValue { index: usize },
    #[error("invalid dims: {0}")]
    InvalidDims(String),
    #[error("volume has a zero-length axis")]
    EmptyVolume,
    #[error("log normalization requires strictly positive values")]
    NonPositiveForLog,
    #[error("region out of bounds: {0}")]
    OutOfBounds(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("unknown kind `{0}`")]
    UnknownKind(String),
    #[error("axis {axis} has odd length {len}")]
    OddDimension { axis: usize, len: usize },
    #[error("{0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("axis {axis} of length {len} is not divisible by {factor}")]
    IndivisibleDimension {
        axis: usize,
        len: usize,
        factor: usize,
    },
    #[error("level order violated: from {from} to {to}")]
    LevelOrder { from: u32, to: u32 },
    #[error("invalid build config: {0}")]
    InvalidConfig(String),
    #[error("single-voxel leaf at {origin:?} (level {level}) has no matching siblings")]
    OrphanSingleVoxel { origin: Vec<usize>, level: u32 },
    #[error("volume dims {dims:?} smaller than window {window}")]
    TooSmallForWindow { dims: Vec<usize>, window: usize },

    #[error("connect failed: {0}")]
    ConnectFailed(String),
    #[error("handshake timed out")]
    HandshakeTimeout,
    #[error("bad endpoint spec: {0}")]
    BadSpec(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("server error: {0}")]
    ServerError(String),
    #[error("request timed out")]
    Timeout,
    #[error("payload of {bytes} bytes exceeds cap of {cap} bytes")]
    PayloadTooLarge { bytes: u64, cap: u64 },

    #[error("header/payload mismatch: {0}")]
    HeaderPayloadMismatch(String),
    #[error("unsupported element type `{0}`")]
    UnsupportedElementType(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    VersionUnsupported(u16),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
