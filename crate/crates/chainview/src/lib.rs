//! Scan a Bitcoin blockchain (raw block files, a JSON-RPC node, or a
//! synthetic test chain), build enriched views combining on-chain data with
//! external data, persist them to pluggable sinks, and aggregate analytics
//! over the results.

pub mod analytics;
pub mod base58;
pub mod chaingen;
pub mod enrich;
pub mod error;
pub mod model;
pub mod navigator;
pub mod parser;
pub mod sink;
pub mod source;
pub mod views;

pub use error::{Error, ParseError, ParseWarning};
pub use model::{Amount, Block, BlockHeader, Hash256, Network, OutPoint, Script, Transaction};
