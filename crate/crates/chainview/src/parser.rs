//! Decoder for the Bitcoin consensus wire format: CompactSize varints,
//! headers, legacy and segwit transactions, whole blocks, and blk-style
//! block files.
//!
//! Every declared count is validated against the bytes that remain before
//! anything is allocated, so arbitrary input terminates with a structured
//! error instead of an OOM. Non-canonical varints and oversized scripts are
//! warnings, not failures; real chains contain both.

use std::fs::File;
use std::io::{BufReader, ErrorKind, Read};
use std::path::{Path, PathBuf};

use crate::error::{Error, ParseError, ParseWarning};
use crate::model::{
    block_hash, tx_id, Amount, Block, BlockHeader, Hash256, OutPoint, Script, Transaction,
    TxInput, TxOutput,
};

/// Standard script-length limit; longer scripts parse with a warning.
const MAX_STANDARD_SCRIPT: usize = 10_000;

/// Minimum serialized sizes used to bound allocations from declared counts.
const MIN_TX_BYTES: usize = 60;
const MIN_INPUT_BYTES: usize = 41;
const MIN_OUTPUT_BYTES: usize = 9;

/// A read position over a byte buffer. Reads advance the offset by exactly
/// the bytes consumed and collect non-fatal warnings as they go.
pub struct ByteCursor<'a> {
    data: &'a [u8],
    pos: usize,
    warnings: Vec<ParseWarning>,
}

impl<'a> ByteCursor<'a> {
    pub fn new(data: &'a [u8]) -> ByteCursor<'a> {
        ByteCursor {
            data,
            pos: 0,
            warnings: Vec::new(),
        }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn take_warnings(&mut self) -> Vec<ParseWarning> {
        std::mem::take(&mut self.warnings)
    }

    fn need(&self, n: usize) -> Result<(), ParseError> {
        if self.remaining() < n {
            Err(ParseError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.remaining(),
            })
        } else {
            Ok(())
        }
    }

    pub fn read_bytes(&mut self, n: usize) -> Result<&'a [u8], ParseError> {
        self.need(n)?;
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn read_u8(&mut self) -> Result<u8, ParseError> {
        Ok(self.read_bytes(1)?[0])
    }

    pub fn read_u16(&mut self) -> Result<u16, ParseError> {
        let b = self.read_bytes(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn read_u32(&mut self) -> Result<u32, ParseError> {
        let b = self.read_bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn read_i32(&mut self) -> Result<i32, ParseError> {
        Ok(self.read_u32()? as i32)
    }

    pub fn read_u64(&mut self) -> Result<u64, ParseError> {
        let b = self.read_bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn read_hash(&mut self) -> Result<Hash256, ParseError> {
        let b = self.read_bytes(32)?;
        Ok(Hash256::from_bytes(b.try_into().unwrap()))
    }

    /// Decode a CompactSize varint. Values encodable in fewer bytes are
    /// reported as a warning and still returned.
    pub fn read_varint(&mut self) -> Result<u64, ParseError> {
        let offset = self.pos;
        let tag = self.read_u8()?;
        let (value, min_tag_value) = match tag {
            0xFD => (u64::from(self.read_u16()?), 0xFDu64),
            0xFE => (u64::from(self.read_u32()?), 0x1_0000),
            0xFF => (self.read_u64()?, 0x1_0000_0000),
            literal => return Ok(u64::from(literal)),
        };
        if value < min_tag_value {
            self.warnings
                .push(ParseWarning::NonCanonicalVarint { offset, value });
        }
        Ok(value)
    }

    /// Read a count that precedes `min_item_bytes`-sized items, rejecting
    /// declarations the remaining buffer cannot possibly hold.
    fn read_count(&mut self, min_item_bytes: usize) -> Result<usize, ParseError> {
        let offset = self.pos;
        let declared = self.read_varint()?;
        let cap = (self.remaining() / min_item_bytes.max(1)) as u64;
        if declared > cap {
            return Err(ParseError::OversizedCount {
                offset,
                declared,
                available: self.remaining(),
            });
        }
        Ok(declared as usize)
    }

    fn read_script(&mut self) -> Result<Script, ParseError> {
        let offset = self.pos;
        let len = self.read_varint()? as usize;
        self.need(len)?;
        if len > MAX_STANDARD_SCRIPT {
            self.warnings
                .push(ParseWarning::OversizedScript { offset, len });
        }
        Ok(Script::new(self.read_bytes(len)?.to_vec()))
    }
}

pub fn parse_header(cur: &mut ByteCursor<'_>) -> Result<BlockHeader, ParseError> {
    cur.need(80)?;
    Ok(BlockHeader {
        version: cur.read_i32()?,
        prev_hash: cur.read_hash()?,
        merkle_root: cur.read_hash()?,
        time: cur.read_u32()?,
        bits: cur.read_u32()?,
        nonce: cur.read_u32()?,
    })
}

fn parse_input(cur: &mut ByteCursor<'_>) -> Result<TxInput, ParseError> {
    let txid = cur.read_hash()?;
    let vout = cur.read_u32()?;
    let script_sig = cur.read_script()?;
    let sequence = cur.read_u32()?;
    Ok(TxInput {
        prevout: OutPoint::new(txid, vout),
        script_sig,
        sequence,
        witness: Vec::new(),
    })
}

fn parse_output(cur: &mut ByteCursor<'_>) -> Result<TxOutput, ParseError> {
    let value = Amount::from_sat(cur.read_u64()? as i64);
    let script_pubkey = cur.read_script()?;
    Ok(TxOutput {
        value,
        script_pubkey,
    })
}

/// Decode one transaction, legacy or segwit layout. `size_bytes` is the
/// total consumed span and the txid is computed witness-stripped.
pub fn parse_transaction(cur: &mut ByteCursor<'_>) -> Result<Transaction, ParseError> {
    let start = cur.pos();
    let version = cur.read_i32()?;

    // Segwit layout: marker 0x00, flag 0x01 between version and input count.
    // A legacy transaction cannot start its input count with 0x00 (that would
    // declare zero inputs), so the marker is unambiguous.
    let mut segwit = false;
    if cur.remaining() >= 1 && cur.data[cur.pos] == 0x00 {
        let marker_offset = cur.pos;
        cur.read_u8()?;
        let flag = cur.read_u8()?;
        if flag != 0x01 {
            return Err(ParseError::MalformedSegwit {
                offset: marker_offset,
            });
        }
        segwit = true;
    }

    let n_inputs = cur.read_count(MIN_INPUT_BYTES)?;
    if n_inputs == 0 {
        return Err(ParseError::ZeroInputs);
    }
    let mut inputs = Vec::with_capacity(n_inputs);
    for _ in 0..n_inputs {
        inputs.push(parse_input(cur)?);
    }

    let n_outputs = cur.read_count(MIN_OUTPUT_BYTES)?;
    if n_outputs == 0 {
        return Err(ParseError::ZeroOutputs);
    }
    let mut outputs = Vec::with_capacity(n_outputs);
    for _ in 0..n_outputs {
        outputs.push(parse_output(cur)?);
    }

    if segwit {
        for input in &mut inputs {
            let n_items = cur.read_count(1)?;
            let mut stack = Vec::with_capacity(n_items);
            for _ in 0..n_items {
                let len = cur.read_varint()? as usize;
                stack.push(cur.read_bytes(len).map(<[u8]>::to_vec)?);
            }
            input.witness = stack;
        }
    }

    let locktime = cur.read_u32()?;

    let mut tx = Transaction {
        version,
        inputs,
        outputs,
        locktime,
        txid: Hash256::ZERO,
        size_bytes: cur.pos() - start,
    };
    tx.txid = tx_id(&tx);
    Ok(tx)
}

/// Decode a whole block; the input must be consumed exactly.
pub fn parse_block(bytes: &[u8]) -> Result<Block, ParseError> {
    parse_block_with_warnings(bytes).map(|(block, _)| block)
}

pub fn parse_block_with_warnings(
    bytes: &[u8],
) -> Result<(Block, Vec<ParseWarning>), ParseError> {
    let mut cur = ByteCursor::new(bytes);
    let header = parse_header(&mut cur)?;
    let n_txs = cur.read_count(MIN_TX_BYTES)?;
    let mut txs = Vec::with_capacity(n_txs);
    for _ in 0..n_txs {
        txs.push(parse_transaction(&mut cur)?);
    }
    if !cur.is_empty() {
        return Err(ParseError::TrailingBytes {
            consumed: cur.pos(),
            total: bytes.len(),
            trailing: cur.remaining(),
        });
    }
    let warnings = cur.take_warnings();
    let block = Block {
        hash: block_hash(&header),
        header,
        txs,
        height: None,
    };
    Ok((block, warnings))
}

/// One `[magic][length][payload]` record from a blk-style file.
#[derive(Debug)]
pub struct FileRecord {
    /// Byte offset of the record's magic within the file.
    pub offset: u64,
    pub payload: Vec<u8>,
}

impl FileRecord {
    /// Offset of the raw block payload within the file.
    pub fn payload_offset(&self) -> u64 {
        self.offset + 8
    }
}

/// Streaming reader over blk-style records. Zero-padding runs between
/// records are skipped; any other byte where a magic should start is a
/// `BadMagic` naming the file offset.
pub struct BlockFileReader<R: Read> {
    reader: R,
    path: PathBuf,
    magic: [u8; 4],
    offset: u64,
}

impl BlockFileReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, magic: [u8; 4]) -> Result<Self, Error> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path)?;
        Ok(BlockFileReader {
            reader: BufReader::with_capacity(1 << 20, file),
            path,
            magic,
            offset: 0,
        })
    }
}

impl<R: Read> BlockFileReader<R> {
    pub fn from_reader(reader: R, magic: [u8; 4]) -> Self {
        BlockFileReader {
            reader,
            path: PathBuf::from("<memory>"),
            magic,
            offset: 0,
        }
    }

    fn read_byte(&mut self) -> Result<Option<u8>, Error> {
        let mut byte = [0u8; 1];
        loop {
            match self.reader.read(&mut byte) {
                Ok(0) => return Ok(None),
                Ok(_) => {
                    self.offset += 1;
                    return Ok(Some(byte[0]));
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<(), Error> {
        self.reader.read_exact(buf)?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    /// Next record, or `None` at end of file.
    pub fn next_record(&mut self) -> Option<Result<FileRecord, Error>> {
        // skip zero padding; no configured magic begins with 0x00
        let first = loop {
            match self.read_byte() {
                Ok(None) => return None,
                Ok(Some(0x00)) => continue,
                Ok(Some(b)) => break b,
                Err(e) => return Some(Err(e)),
            }
        };
        let record_offset = self.offset - 1;

        let mut magic = [first, 0, 0, 0];
        if let Err(e) = self.read_exact(&mut magic[1..]) {
            return Some(Err(e));
        }
        if magic != self.magic {
            return Some(Err(Error::BadMagic {
                file: self.path.clone(),
                offset: record_offset,
            }));
        }

        let mut len_bytes = [0u8; 4];
        if let Err(e) = self.read_exact(&mut len_bytes) {
            return Some(Err(e));
        }
        let len = u32::from_le_bytes(len_bytes) as usize;

        let mut payload = vec![0u8; len];
        if let Err(e) = self.read_exact(&mut payload) {
            return Some(Err(e));
        }
        Some(Ok(FileRecord {
            offset: record_offset,
            payload,
        }))
    }
}

impl<R: Read> Iterator for BlockFileReader<R> {
    type Item = Result<FileRecord, Error>;
    fn next(&mut self) -> Option<Self::Item> {
        self.next_record()
    }
}

/// Stream decoded blocks from a blk-style file, in file order.
pub fn iter_block_file(
    path: impl AsRef<Path>,
    magic: [u8; 4],
) -> Result<impl Iterator<Item = Result<Block, Error>>, Error> {
    let reader = BlockFileReader::open(path, magic)?;
    Ok(reader.map(|record| {
        let record = record?;
        parse_block(&record.payload).map_err(Error::from)
    }))
}

/// Decode every block in an in-memory blk-style byte stream.
pub fn parse_block_file_bytes(bytes: &[u8], magic: [u8; 4]) -> Result<Vec<Block>, Error> {
    BlockFileReader::from_reader(bytes, magic)
        .map(|record| {
            let record = record?;
            parse_block(&record.payload).map_err(Error::from)
        })
        .collect()
}
