//! Consensus-level data types, hashing, and canonical serialization.
//!
//! Amounts are integer satoshi throughout; BTC floats appear only at the
//! analytics/output boundary. Hashes are kept in internal byte order and
//! rendered as byte-reversed ("display order") hex, the convention every
//! explorer uses.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::Error;

pub const SATS_PER_BTC: i64 = 100_000_000;

/// A 32-byte double-SHA256 digest in internal byte order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hash256([u8; 32]);

impl Hash256 {
    pub const ZERO: Hash256 = Hash256([0; 32]);

    pub fn from_bytes(bytes: [u8; 32]) -> Hash256 {
        Hash256(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Parse a display-order (byte-reversed) hex rendering.
    pub fn from_hex(s: &str) -> Result<Hash256, Error> {
        let raw: Vec<u8> = hex::decode(s).map_err(|_| Error::BadHashHex(s.to_string()))?;
        if raw.len() != 32 {
            return Err(Error::BadHashHex(s.to_string()));
        }
        let mut bytes = [0u8; 32];
        for (i, b) in raw.iter().rev().enumerate() {
            bytes[i] = *b;
        }
        Ok(Hash256(bytes))
    }

    /// Display-order lowercase hex, 64 chars.
    pub fn to_hex(&self) -> String {
        let mut rev = self.0;
        rev.reverse();
        hex::encode(rev)
    }
}

impl fmt::Display for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

impl fmt::Debug for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

impl FromStr for Hash256 {
    type Err = Error;
    fn from_str(s: &str) -> Result<Hash256, Error> {
        Hash256::from_hex(s)
    }
}

impl Serialize for Hash256 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash256 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Hash256, D::Error> {
        let s = String::deserialize(deserializer)?;
        Hash256::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A quantity of bitcoin in satoshi. Signed so fee arithmetic can observe
/// (and flag) invalid negative results instead of wrapping.
#[derive(
    Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Amount(i64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub fn from_sat(sat: i64) -> Amount {
        Amount(sat)
    }

    pub fn sat(&self) -> i64 {
        self.0
    }

    /// BTC as a float; use only at output boundaries.
    pub fn to_btc(&self) -> f64 {
        self.0 as f64 / SATS_PER_BTC as f64
    }

    pub fn checked_add(self, other: Amount) -> Option<Amount> {
        self.0.checked_add(other.0).map(Amount)
    }

    pub fn checked_sub(self, other: Amount) -> Option<Amount> {
        self.0.checked_sub(other.0).map(Amount)
    }

    pub fn is_negative(&self) -> bool {
        self.0 < 0
    }
}

impl fmt::Debug for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} sat", self.0)
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::iter::Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        Amount(iter.map(|a| a.0).sum())
    }
}

/// A reference to a transaction output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct OutPoint {
    pub txid: Hash256,
    pub vout: u32,
}

impl OutPoint {
    /// The coinbase sentinel: all-zero txid, vout 0xFFFFFFFF. Valid only in
    /// a block's first transaction.
    pub const COINBASE: OutPoint = OutPoint {
        txid: Hash256::ZERO,
        vout: u32::MAX,
    };

    pub fn new(txid: Hash256, vout: u32) -> OutPoint {
        OutPoint { txid, vout }
    }

    pub fn is_coinbase(&self) -> bool {
        *self == OutPoint::COINBASE
    }
}

impl fmt::Display for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.txid, self.vout)
    }
}

/// Raw script bytes. Never executed here; carried for rendering, address
/// extraction, and OP_RETURN classification.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct Script(Vec<u8>);

impl Script {
    pub fn new(bytes: Vec<u8>) -> Script {
        Script(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Script, Error> {
        Ok(Script(hex::decode(s).map_err(|e| Error::BadHashHex(e.to_string()))?))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }
}

impl fmt::Debug for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Script({})", self.to_hex())
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TxInput {
    pub prevout: OutPoint,
    pub script_sig: Script,
    pub sequence: u32,
    /// Witness stack; empty unless the enclosing transaction is
    /// segwit-serialized.
    pub witness: Vec<Vec<u8>>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TxOutput {
    pub value: Amount,
    pub script_pubkey: Script,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Transaction {
    pub version: i32,
    pub inputs: Vec<TxInput>,
    pub outputs: Vec<TxOutput>,
    pub locktime: u32,
    /// Witness-excluded double-SHA256 of the serialization.
    pub txid: Hash256,
    /// Total serialized size, witness included.
    pub size_bytes: usize,
}

impl Transaction {
    /// Build a transaction, computing txid and size from the parts.
    pub fn from_parts(
        version: i32,
        inputs: Vec<TxInput>,
        outputs: Vec<TxOutput>,
        locktime: u32,
    ) -> Transaction {
        let mut tx = Transaction {
            version,
            inputs,
            outputs,
            locktime,
            txid: Hash256::ZERO,
            size_bytes: 0,
        };
        tx.txid = tx_id(&tx);
        tx.size_bytes = serialize_transaction(&tx).len();
        tx
    }

    pub fn is_coinbase(&self) -> bool {
        self.inputs.len() == 1 && self.inputs[0].prevout.is_coinbase()
    }

    pub fn has_witness(&self) -> bool {
        self.inputs.iter().any(|i| !i.witness.is_empty())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BlockHeader {
    pub version: i32,
    pub prev_hash: Hash256,
    pub merkle_root: Hash256,
    pub time: u32,
    pub bits: u32,
    pub nonce: u32,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Block {
    pub header: BlockHeader,
    pub txs: Vec<Transaction>,
    pub hash: Hash256,
    /// Attached by the navigator once the block's place on the main chain
    /// is known.
    pub height: Option<u64>,
}

impl Block {
    pub fn from_parts(header: BlockHeader, txs: Vec<Transaction>) -> Block {
        Block {
            hash: block_hash(&header),
            header,
            txs,
            height: None,
        }
    }

    pub fn date(&self) -> NaiveDate {
        date_of(self.header.time)
    }
}

/// The network a chain belongs to; selects file magic and address versions.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Network {
    Mainnet,
    Testnet,
    Regtest,
}

impl Network {
    /// Block-file record magic, in file byte order.
    pub fn magic(&self) -> [u8; 4] {
        match self {
            Network::Mainnet => [0xF9, 0xBE, 0xB4, 0xD9],
            Network::Testnet => [0x0B, 0x11, 0x09, 0x07],
            Network::Regtest => [0xFA, 0xBF, 0xB5, 0xDA],
        }
    }

    pub fn p2pkh_version(&self) -> u8 {
        match self {
            Network::Mainnet => 0x00,
            Network::Testnet | Network::Regtest => 0x6F,
        }
    }

    pub fn p2sh_version(&self) -> u8 {
        match self {
            Network::Mainnet => 0x05,
            Network::Testnet | Network::Regtest => 0xC4,
        }
    }
}

impl FromStr for Network {
    type Err = Error;
    fn from_str(s: &str) -> Result<Network, Error> {
        match s {
            "mainnet" => Ok(Network::Mainnet),
            "testnet" => Ok(Network::Testnet),
            "regtest" => Ok(Network::Regtest),
            other => Err(Error::InvalidSpec(format!("unknown network {other:?}"))),
        }
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Network::Mainnet => write!(f, "mainnet"),
            Network::Testnet => write!(f, "testnet"),
            Network::Regtest => write!(f, "regtest"),
        }
    }
}

pub fn double_sha256(data: &[u8]) -> Hash256 {
    let first = Sha256::digest(data);
    let second = Sha256::digest(first);
    Hash256(second.into())
}

pub fn block_hash(header: &BlockHeader) -> Hash256 {
    double_sha256(&serialize_header(header))
}

/// Witness-excluded transaction id. Witness data never affects the txid.
pub fn tx_id(tx: &Transaction) -> Hash256 {
    double_sha256(&serialize_transaction_stripped(tx))
}

/// UTC calendar date of a block timestamp.
pub fn date_of(time: u32) -> NaiveDate {
    DateTime::from_timestamp(i64::from(time), 0)
        .expect("u32 timestamp in range")
        .date_naive()
}

// --- canonical serialization ---

pub fn write_varint(out: &mut Vec<u8>, value: u64) {
    if value < 0xFD {
        out.push(value as u8);
    } else if value <= 0xFFFF {
        out.push(0xFD);
        out.extend_from_slice(&(value as u16).to_le_bytes());
    } else if value <= 0xFFFF_FFFF {
        out.push(0xFE);
        out.extend_from_slice(&(value as u32).to_le_bytes());
    } else {
        out.push(0xFF);
        out.extend_from_slice(&value.to_le_bytes());
    }
}

pub fn serialize_header(header: &BlockHeader) -> [u8; 80] {
    let mut out = [0u8; 80];
    out[0..4].copy_from_slice(&header.version.to_le_bytes());
    out[4..36].copy_from_slice(header.prev_hash.as_bytes());
    out[36..68].copy_from_slice(header.merkle_root.as_bytes());
    out[68..72].copy_from_slice(&header.time.to_le_bytes());
    out[72..76].copy_from_slice(&header.bits.to_le_bytes());
    out[76..80].copy_from_slice(&header.nonce.to_le_bytes());
    out
}

fn write_tx_core(out: &mut Vec<u8>, tx: &Transaction) {
    write_varint(out, tx.inputs.len() as u64);
    for input in &tx.inputs {
        out.extend_from_slice(input.prevout.txid.as_bytes());
        out.extend_from_slice(&input.prevout.vout.to_le_bytes());
        write_varint(out, input.script_sig.len() as u64);
        out.extend_from_slice(input.script_sig.as_bytes());
        out.extend_from_slice(&input.sequence.to_le_bytes());
    }
    write_varint(out, tx.outputs.len() as u64);
    for output in &tx.outputs {
        out.extend_from_slice(&output.value.sat().to_le_bytes());
        write_varint(out, output.script_pubkey.len() as u64);
        out.extend_from_slice(output.script_pubkey.as_bytes());
    }
}

/// Serialize with the segwit frame iff any input carries witness data.
pub fn serialize_transaction(tx: &Transaction) -> Vec<u8> {
    let mut out = Vec::with_capacity(tx.size_bytes.max(64));
    out.extend_from_slice(&tx.version.to_le_bytes());
    let segwit = tx.has_witness();
    if segwit {
        out.push(0x00); // marker
        out.push(0x01); // flag
    }
    write_tx_core(&mut out, tx);
    if segwit {
        for input in &tx.inputs {
            write_varint(&mut out, input.witness.len() as u64);
            for item in &input.witness {
                write_varint(&mut out, item.len() as u64);
                out.extend_from_slice(item);
            }
        }
    }
    out.extend_from_slice(&tx.locktime.to_le_bytes());
    out
}

/// Legacy-layout serialization with witnesses stripped; hashing this yields
/// the txid.
pub fn serialize_transaction_stripped(tx: &Transaction) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(&tx.version.to_le_bytes());
    write_tx_core(&mut out, tx);
    out.extend_from_slice(&tx.locktime.to_le_bytes());
    out
}

pub fn serialize_block(block: &Block) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&serialize_header(&block.header));
    write_varint(&mut out, block.txs.len() as u64);
    for tx in &block.txs {
        out.extend_from_slice(&serialize_transaction(tx));
    }
    out
}
