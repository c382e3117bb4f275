//! Error types shared across the crate.

use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

use crate::model::OutPoint;

/// Errors raised while decoding the consensus wire format.
///
/// Parsing never panics on malformed input; every failure mode maps to one
/// of these variants so callers can keep scanning past bad data.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("truncated input at offset {offset}: need {needed} more bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("segwit marker at offset {offset} not followed by flag 0x01")]
    MalformedSegwit { offset: usize },
    #[error("transaction has zero inputs")]
    ZeroInputs,
    #[error("transaction has zero outputs")]
    ZeroOutputs,
    #[error("{trailing} trailing bytes after block (consumed {consumed} of {total})")]
    TrailingBytes {
        consumed: usize,
        total: usize,
        trailing: usize,
    },
    #[error("declared count {declared} at offset {offset} exceeds what {available} remaining bytes can hold")]
    OversizedCount {
        offset: usize,
        declared: u64,
        available: usize,
    },
}

/// Non-fatal oddities observed while parsing. Real chains contain these;
/// scans record them and keep going.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    /// A CompactSize value encoded in more bytes than necessary.
    NonCanonicalVarint { offset: usize, value: u64 },
    /// A script longer than the standard 10,000-byte limit.
    OversizedScript { offset: usize, len: usize },
}

impl std::fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseWarning::NonCanonicalVarint { offset, value } => {
                write!(f, "non-canonical varint {value} at offset {offset}")
            }
            ParseWarning::OversizedScript { offset, len } => {
                write!(f, "script of {len} bytes at offset {offset} exceeds 10000")
            }
        }
    }
}

/// Crate-wide error type covering sources, scanning, enrichment, views,
/// and sinks.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("bad magic in {file} at byte offset {offset}")]
    BadMagic { file: PathBuf, offset: u64 },

    #[error("genesis block not found in the given block files")]
    GenesisNotFound,

    #[error("block {hash} not found")]
    BlockNotFound { hash: String },

    #[error("invalid range: start {start}, end {end}, best height {best}")]
    RangeInvalid { start: u64, end: u64, best: u64 },

    #[error("rpc endpoint unreachable: {0}")]
    Unreachable(String),

    #[error("rpc authentication failed")]
    AuthFailed,

    #[error("rpc error {code}: {message}")]
    Rpc { code: i64, message: String },

    #[error("malformed rpc response: {0}")]
    RpcProtocol(String),

    #[error("missing prevout {txid}:{vout}", txid = outpoint.txid, vout = outpoint.vout)]
    MissingPrevout { outpoint: OutPoint },

    #[error("deep scan must start at height 0, got {start}")]
    DeepScanMidChain { start: u64 },

    #[error("no exchange rate for {0}")]
    DateNotCovered(NaiveDate),

    #[error("rate fetch failed: {0}")]
    FetchFailed(String),

    #[error("malformed line {line} in {file}: {reason}")]
    MalformedLine {
        file: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("malformed push at script offset {offset}: declared {declared} bytes, {available} remain")]
    MalformedPush {
        offset: usize,
        declared: usize,
        available: usize,
    },

    #[error("schema for view {view} not supported by this sink: {reason}")]
    UnsupportedSchema { view: String, reason: String },

    #[error("record of view {got} written to a sink opened for {expected}")]
    SchemaMismatch { expected: String, got: String },

    #[error("sink is not open for writing")]
    SinkClosed,

    #[error("analytic needs at least one record")]
    EmptyInput,

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("invalid hash hex: {0}")]
    BadHashHex(String),

    #[error("base58 decode failed: {0}")]
    Base58(String),

    #[error("error at height {height}: {source}")]
    AtHeight {
        height: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attach the block height at which a scan-time error occurred.
    pub fn at_height(self, height: u64) -> Error {
        Error::AtHeight {
            height,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
