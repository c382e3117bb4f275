//! Uniform height-ordered access to a chain, backed by raw block files,
//! a JSON-RPC node, or an in-memory synthetic chain.
//!
//! Every source answers the same three questions: how high is the chain,
//! which hash sits at a height, and what block has a hash. Scans are then
//! one loop: hash by height, block by hash, increment.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use base64::Engine;

use crate::error::Error;
use crate::model::{Block, Hash256};
use crate::parser::{parse_block, parse_header, BlockFileReader, ByteCursor};

pub trait ChainSource {
    fn best_height(&self) -> Result<u64, Error>;
    fn hash_at(&self, height: u64) -> Result<Hash256, Error>;
    fn block_by_hash(&self, hash: &Hash256) -> Result<Block, Error>;
}

/// Where a block's payload lives on disk.
#[derive(Debug, Clone, Copy)]
struct BlockLocation {
    file: usize,
    payload_offset: u64,
    payload_len: u32,
}

/// Index over a set of blk-style files: every block by hash plus the
/// resolved main chain by height.
pub struct FileIndex {
    files: Vec<PathBuf>,
    by_hash: HashMap<Hash256, BlockLocation>,
    main_chain: Vec<Hash256>,
    height_by_hash: HashMap<Hash256, u64>,
    /// Blocks present in the files but not on the main chain.
    pub orphans: u64,
}

impl FileIndex {
    pub fn main_chain(&self) -> &[Hash256] {
        &self.main_chain
    }

    pub fn height_of(&self, hash: &Hash256) -> Option<u64> {
        self.height_by_hash.get(hash).copied()
    }
}

/// Two-pass index construction. Pass 1 records each block's header and
/// location; pass 2 walks prev-links forward from genesis, choosing the
/// branch with the greatest cumulative block count at forks (ties broken
/// by first-seen order). Paths are sorted first so the result does not
/// depend on argument order.
pub fn build_file_index(
    paths: &[PathBuf],
    genesis: Option<Hash256>,
    magic: [u8; 4],
) -> Result<FileIndex, Error> {
    let mut files: Vec<PathBuf> = paths.to_vec();
    files.sort();

    let mut by_hash: HashMap<Hash256, BlockLocation> = HashMap::new();
    let mut children: HashMap<Hash256, Vec<Hash256>> = HashMap::new();
    let mut roots: Vec<Hash256> = Vec::new(); // blocks with prev == ZERO, first-seen order

    for (file_idx, path) in files.iter().enumerate() {
        let mut reader = BlockFileReader::open(path, magic)?;
        while let Some(record) = reader.next_record() {
            let record = record?;
            let mut cur = ByteCursor::new(&record.payload);
            let header = parse_header(&mut cur)?;
            let hash = crate::model::block_hash(&header);
            if by_hash.contains_key(&hash) {
                continue;
            }
            by_hash.insert(
                hash,
                BlockLocation {
                    file: file_idx,
                    payload_offset: record.payload_offset(),
                    payload_len: record.payload.len() as u32,
                },
            );
            if header.prev_hash == Hash256::ZERO {
                roots.push(hash);
            } else {
                children.entry(header.prev_hash).or_default().push(hash);
            }
        }
    }

    let genesis = match genesis {
        Some(h) => {
            if !by_hash.contains_key(&h) {
                return Err(Error::GenesisNotFound);
            }
            h
        }
        None => *roots.first().ok_or(Error::GenesisNotFound)?,
    };

    // longest-chain depth below each block, memoized; chains here carry no
    // meaningful work, so block count stands in for cumulative difficulty
    let mut depth: HashMap<Hash256, u64> = HashMap::new();
    fn depth_of(
        hash: Hash256,
        children: &HashMap<Hash256, Vec<Hash256>>,
        depth: &mut HashMap<Hash256, u64>,
    ) -> u64 {
        if let Some(d) = depth.get(&hash) {
            return *d;
        }
        // iterative post-order to stay safe on long chains
        let mut stack = vec![(hash, false)];
        while let Some((node, expanded)) = stack.pop() {
            if depth.contains_key(&node) {
                continue;
            }
            let kids = children.get(&node);
            if expanded || kids.is_none_or(|k| k.is_empty()) {
                let best = kids
                    .map(|k| {
                        k.iter()
                            .map(|c| depth.get(c).copied().unwrap_or(0))
                            .max()
                            .unwrap_or(0)
                    })
                    .unwrap_or(0);
                depth.insert(node, best + 1);
            } else {
                stack.push((node, true));
                for kid in kids.into_iter().flatten() {
                    stack.push((*kid, false));
                }
            }
        }
        depth[&hash]
    }

    let mut main_chain = vec![genesis];
    let mut height_by_hash = HashMap::new();
    height_by_hash.insert(genesis, 0u64);
    let mut cursor = genesis;
    while let Some(kids) = children.get(&cursor) {
        let mut best: Option<(u64, Hash256)> = None;
        for kid in kids {
            let d = depth_of(*kid, &children, &mut depth);
            // strictly greater keeps first-seen order on ties
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, *kid));
            }
        }
        let Some((_, next)) = best else { break };
        height_by_hash.insert(next, main_chain.len() as u64);
        main_chain.push(next);
        cursor = next;
    }

    let orphans = (by_hash.len() - main_chain.len()) as u64;
    Ok(FileIndex {
        files,
        by_hash,
        main_chain,
        height_by_hash,
        orphans,
    })
}

/// Chain source over indexed block files.
pub struct FileSource {
    index: FileIndex,
}

impl FileSource {
    pub fn open(
        paths: &[PathBuf],
        genesis: Option<Hash256>,
        magic: [u8; 4],
    ) -> Result<FileSource, Error> {
        Ok(FileSource {
            index: build_file_index(paths, genesis, magic)?,
        })
    }

    /// All `blk*.dat`-style files directly under a directory.
    pub fn open_dir(
        dir: impl AsRef<Path>,
        genesis: Option<Hash256>,
        magic: [u8; 4],
    ) -> Result<FileSource, Error> {
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            if entry.file_type()?.is_file() {
                paths.push(entry.path());
            }
        }
        FileSource::open(&paths, genesis, magic)
    }

    pub fn index(&self) -> &FileIndex {
        &self.index
    }
}

impl ChainSource for FileSource {
    fn best_height(&self) -> Result<u64, Error> {
        Ok(self.index.main_chain.len() as u64 - 1)
    }

    fn hash_at(&self, height: u64) -> Result<Hash256, Error> {
        self.index
            .main_chain
            .get(height as usize)
            .copied()
            .ok_or_else(|| Error::RangeInvalid {
                start: height,
                end: height,
                best: self.index.main_chain.len() as u64 - 1,
            })
    }

    fn block_by_hash(&self, hash: &Hash256) -> Result<Block, Error> {
        let loc = self
            .index
            .by_hash
            .get(hash)
            .ok_or_else(|| Error::BlockNotFound {
                hash: hash.to_hex(),
            })?;
        let mut file = File::open(&self.index.files[loc.file])?;
        file.seek(SeekFrom::Start(loc.payload_offset))?;
        let mut payload = vec![0u8; loc.payload_len as usize];
        file.read_exact(&mut payload)?;
        let mut block = parse_block(&payload)?;
        block.height = self.index.height_of(hash);
        Ok(block)
    }
}

/// In-memory source over an already-decoded chain, height order given.
pub struct MemorySource {
    blocks: Vec<Block>,
    by_hash: HashMap<Hash256, usize>,
}

impl MemorySource {
    pub fn new(blocks: Vec<Block>) -> MemorySource {
        let by_hash = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.hash, i))
            .collect();
        MemorySource { blocks, by_hash }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }
}

impl ChainSource for MemorySource {
    fn best_height(&self) -> Result<u64, Error> {
        if self.blocks.is_empty() {
            return Err(Error::GenesisNotFound);
        }
        Ok(self.blocks.len() as u64 - 1)
    }

    fn hash_at(&self, height: u64) -> Result<Hash256, Error> {
        self.blocks
            .get(height as usize)
            .map(|b| b.hash)
            .ok_or_else(|| Error::RangeInvalid {
                start: height,
                end: height,
                best: (self.blocks.len() as u64).saturating_sub(1),
            })
    }

    fn block_by_hash(&self, hash: &Hash256) -> Result<Block, Error> {
        let idx = self.by_hash.get(hash).ok_or_else(|| Error::BlockNotFound {
            hash: hash.to_hex(),
        })?;
        let mut block = self.blocks[*idx].clone();
        block.height = Some(*idx as u64);
        Ok(block)
    }
}

/// JSON-RPC client for a Bitcoin Core style node: `getblockcount`,
/// `getblockhash`, and `getblock` at verbosity 0 (hex payload), over HTTP
/// Basic auth with JSON-RPC 1.0 framing.
pub struct RpcSource {
    url: String,
    auth_header: String,
    agent: ureq::Agent,
}

impl RpcSource {
    pub fn new(url: impl Into<String>, user: &str, pass: &str) -> RpcSource {
        let credentials = base64::engine::general_purpose::STANDARD
            .encode(format!("{user}:{pass}"));
        RpcSource {
            url: url.into(),
            auth_header: format!("Basic {credentials}"),
            agent: ureq::AgentBuilder::new().build(),
        }
    }

    fn call(&self, method: &str, params: serde_json::Value) -> Result<serde_json::Value, Error> {
        let request = serde_json::json!({
            "jsonrpc": "1.0",
            "id": "chainview",
            "method": method,
            "params": params,
        });
        let mut body = request.to_string();
        body.push('\n');

        let response = self
            .agent
            .post(&self.url)
            .set("Authorization", &self.auth_header)
            .set("Content-Type", "application/json")
            .send_string(&body);

        let text = match response {
            Ok(resp) => resp
                .into_string()
                .map_err(|e| Error::RpcProtocol(e.to_string()))?,
            Err(ureq::Error::Status(401, _)) | Err(ureq::Error::Status(403, _)) => {
                return Err(Error::AuthFailed)
            }
            Err(ureq::Error::Status(_, resp)) => {
                // bitcoind reports rpc errors with a non-2xx status and a
                // regular json-rpc body
                resp.into_string()
                    .map_err(|e| Error::RpcProtocol(e.to_string()))?
            }
            Err(ureq::Error::Transport(t)) => return Err(Error::Unreachable(t.to_string())),
        };

        let parsed: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::RpcProtocol(format!("invalid json: {e}")))?;
        if let Some(err) = parsed.get("error").filter(|e| !e.is_null()) {
            return Err(Error::Rpc {
                code: err.get("code").and_then(|c| c.as_i64()).unwrap_or(0),
                message: err
                    .get("message")
                    .and_then(|m| m.as_str())
                    .unwrap_or("")
                    .to_string(),
            });
        }
        parsed
            .get("result")
            .cloned()
            .ok_or_else(|| Error::RpcProtocol("missing result".to_string()))
    }
}

impl ChainSource for RpcSource {
    fn best_height(&self) -> Result<u64, Error> {
        self.call("getblockcount", serde_json::json!([]))?
            .as_u64()
            .ok_or_else(|| Error::RpcProtocol("getblockcount: not a number".to_string()))
    }

    fn hash_at(&self, height: u64) -> Result<Hash256, Error> {
        let value = self.call("getblockhash", serde_json::json!([height]))?;
        let hex = value
            .as_str()
            .ok_or_else(|| Error::RpcProtocol("getblockhash: not a string".to_string()))?;
        Hash256::from_hex(hex)
    }

    fn block_by_hash(&self, hash: &Hash256) -> Result<Block, Error> {
        let value = self.call("getblock", serde_json::json!([hash.to_hex(), 0]))?;
        let hex = value
            .as_str()
            .ok_or_else(|| Error::RpcProtocol("getblock: not a string".to_string()))?;
        let payload =
            hex::decode(hex).map_err(|e| Error::RpcProtocol(format!("bad block hex: {e}")))?;
        Ok(parse_block(&payload)?)
    }
}

/// Height-ordered stream over `[start, end]`, both inclusive, each block
/// with its height attached. Errors carry the height and end the stream.
pub fn iterate<'s>(
    source: &'s dyn ChainSource,
    start: u64,
    end: u64,
) -> Result<BlockIter<'s>, Error> {
    let best = source.best_height()?;
    if start > end || end > best {
        return Err(Error::RangeInvalid { start, end, best });
    }
    Ok(BlockIter {
        source,
        next: start,
        end,
        done: false,
    })
}

pub struct BlockIter<'s> {
    source: &'s dyn ChainSource,
    next: u64,
    end: u64,
    done: bool,
}

impl Iterator for BlockIter<'_> {
    type Item = Result<(u64, Block), Error>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.next > self.end {
            return None;
        }
        let height = self.next;
        self.next += 1;
        let fetch = || -> Result<(u64, Block), Error> {
            let hash = self.source.hash_at(height)?;
            let mut block = self.source.block_by_hash(&hash)?;
            block.height = Some(height);
            Ok((height, block))
        };
        match fetch() {
            Ok(item) => Some(Ok(item)),
            Err(e) => {
                self.done = true;
                Some(Err(e.at_height(height)))
            }
        }
    }
}
