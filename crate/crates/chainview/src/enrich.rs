//! External-data integration: exchange rates, address tags, OP_RETURN
//! protocol classification, and address extraction from output scripts.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ripemd::Ripemd160;
use sha2::{Digest, Sha256};

use crate::base58;
use crate::error::Error;
use crate::model::{Network, Script};

pub const OP_RETURN: u8 = 0x6A;
const OP_PUSHDATA1: u8 = 0x4C;
const OP_PUSHDATA2: u8 = 0x4D;
const OP_PUSHDATA4: u8 = 0x4E;

/// Environment variable overriding the exchange-rate endpoint.
pub const RATES_URL_ENV: &str = "CHAINVIEW_RATES_URL";

// --- exchange rates ---

/// Date → USD-per-BTC lookups, either loaded from a CSV file or fetched
/// over HTTP with a local CSV cache. Lookups outside coverage fail
/// explicitly; there is no interpolation.
pub struct RateTable {
    rates: BTreeMap<NaiveDate, f64>,
    http: Option<HttpRates>,
}

struct HttpRates {
    base_url: String,
    cache_path: PathBuf,
    agent: ureq::Agent,
}

impl RateTable {
    pub fn from_entries(entries: impl IntoIterator<Item = (NaiveDate, f64)>) -> RateTable {
        RateTable {
            rates: entries.into_iter().collect(),
            http: None,
        }
    }

    /// Load a `date,rate` CSV file (the cache format).
    pub fn from_csv(path: impl AsRef<Path>) -> Result<RateTable, Error> {
        let path = path.as_ref();
        let mut rates = BTreeMap::new();
        let content = std::fs::read_to_string(path)?;
        for (idx, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |reason: &str| Error::MalformedLine {
                file: path.to_path_buf(),
                line: idx as u64 + 1,
                reason: reason.to_string(),
            };
            let (date, rate) = line.split_once(',').ok_or_else(|| malformed("no comma"))?;
            let date: NaiveDate = date
                .trim()
                .parse()
                .map_err(|_| malformed("bad date"))?;
            let rate: f64 = rate.trim().parse().map_err(|_| malformed("bad rate"))?;
            if rate < 0.0 {
                return Err(malformed("negative rate"));
            }
            rates.insert(date, rate);
        }
        Ok(RateTable { rates, http: None })
    }

    /// An HTTP-backed table. Existing cache entries are loaded eagerly;
    /// each uncovered date is fetched once and appended to the cache, so a
    /// later offline run can replay from the cache alone.
    pub fn with_http(
        base_url: impl Into<String>,
        cache_path: impl AsRef<Path>,
    ) -> Result<RateTable, Error> {
        let cache_path = cache_path.as_ref().to_path_buf();
        let mut table = if cache_path.exists() {
            RateTable::from_csv(&cache_path)?
        } else {
            RateTable::from_entries([])
        };
        table.http = Some(HttpRates {
            base_url: base_url.into(),
            cache_path,
            agent: ureq::AgentBuilder::new().build(),
        });
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// The exact table value for `date`. HTTP-backed tables fetch-and-cache
    /// on a miss; file-backed tables fail with `DateNotCovered`.
    pub fn get(&mut self, date: NaiveDate) -> Result<f64, Error> {
        if let Some(rate) = self.rates.get(&date) {
            return Ok(*rate);
        }
        if self.http.is_some() {
            self.fetch(date)?;
            if let Some(rate) = self.rates.get(&date) {
                return Ok(*rate);
            }
        }
        Err(Error::DateNotCovered(date))
    }

    fn fetch(&mut self, date: NaiveDate) -> Result<(), Error> {
        let http = self.http.as_ref().expect("fetch needs http backing");
        let url = format!("{}?start={date}&end={date}", http.base_url);
        let response = http
            .agent
            .get(&url)
            .call()
            .map_err(|e| Error::FetchFailed(e.to_string()))?;
        let body: serde_json::Value = response
            .into_json()
            .map_err(|e| Error::FetchFailed(format!("bad json: {e}")))?;
        let bpi = body
            .get("bpi")
            .and_then(|v| v.as_object())
            .ok_or_else(|| Error::FetchFailed("missing bpi object".to_string()))?;

        let mut fetched: Vec<(NaiveDate, f64)> = Vec::new();
        for (key, value) in bpi {
            let d: NaiveDate = key
                .parse()
                .map_err(|_| Error::FetchFailed(format!("bad date key {key:?}")))?;
            let rate = value
                .as_f64()
                .ok_or_else(|| Error::FetchFailed(format!("non-numeric rate for {key}")))?;
            if rate < 0.0 {
                return Err(Error::FetchFailed(format!("negative rate for {key}")));
            }
            fetched.push((d, rate));
        }
        fetched.sort_by_key(|(d, _)| *d);

        let mut cache = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&http.cache_path)?;
        for (d, rate) in &fetched {
            if self.rates.insert(*d, *rate).is_none() {
                writeln!(cache, "{d},{rate}")?;
            }
        }
        cache.flush()?;
        Ok(())
    }
}

/// Convenience wrapper matching the operation shape used elsewhere.
pub fn get_rate(table: &mut RateTable, date: NaiveDate) -> Result<f64, Error> {
    table.get(date)
}

// --- address tags ---

/// Address → tag lookups loaded from a TAB-separated file.
#[derive(Debug)]
pub struct TagMap {
    tags: HashMap<String, String>,
    pub warnings: Vec<String>,
}

impl TagMap {
    pub fn empty() -> TagMap {
        TagMap {
            tags: HashMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, String)>) -> TagMap {
        TagMap {
            tags: entries.into_iter().collect(),
            warnings: Vec::new(),
        }
    }

    pub fn get(&self, address: &str) -> Option<&str> {
        self.tags.get(address).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Load an `address<TAB>tag` file. Duplicate addresses keep the first
/// occurrence with a warning; a line without a TAB or with an empty tag is
/// an error naming the line number.
pub fn load_tags(path: impl AsRef<Path>) -> Result<TagMap, Error> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path)?;
    let mut map = TagMap::empty();
    for (idx, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let number = idx as u64 + 1;
        let malformed = |reason: &str| Error::MalformedLine {
            file: path.to_path_buf(),
            line: number,
            reason: reason.to_string(),
        };
        let (address, tag) = line.split_once('\t').ok_or_else(|| malformed("no TAB"))?;
        if address.is_empty() {
            return Err(malformed("empty address"));
        }
        if tag.is_empty() {
            return Err(malformed("empty tag"));
        }
        if map.tags.contains_key(address) {
            map.warnings
                .push(format!("line {number}: duplicate address {address}, keeping first"));
            continue;
        }
        map.tags.insert(address.to_string(), tag.to_string());
    }
    Ok(map)
}

// --- OP_RETURN metadata ---

/// True iff the script's first opcode is OP_RETURN.
pub fn is_op_return(script: &Script) -> bool {
    script.as_bytes().first() == Some(&OP_RETURN)
}

/// Concatenation of the data pushed after OP_RETURN. Empty when no push
/// follows; iteration stops at the first non-push opcode.
pub fn extract_metadata(script: &Script) -> Result<Vec<u8>, Error> {
    let bytes = script.as_bytes();
    if bytes.first() != Some(&OP_RETURN) {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut pos = 1usize;
    while pos < bytes.len() {
        let opcode = bytes[pos];
        let (len, header) = match opcode {
            0x01..=0x4B => (opcode as usize, 1),
            OP_PUSHDATA1 => {
                if pos + 1 >= bytes.len() {
                    return Err(Error::MalformedPush {
                        offset: pos,
                        declared: 1,
                        available: bytes.len() - pos - 1,
                    });
                }
                (bytes[pos + 1] as usize, 2)
            }
            OP_PUSHDATA2 => {
                if pos + 2 >= bytes.len() {
                    return Err(Error::MalformedPush {
                        offset: pos,
                        declared: 2,
                        available: bytes.len() - pos - 1,
                    });
                }
                (
                    u16::from_le_bytes([bytes[pos + 1], bytes[pos + 2]]) as usize,
                    3,
                )
            }
            OP_PUSHDATA4 => {
                if pos + 4 >= bytes.len() {
                    return Err(Error::MalformedPush {
                        offset: pos,
                        declared: 4,
                        available: bytes.len() - pos - 1,
                    });
                }
                (
                    u32::from_le_bytes([
                        bytes[pos + 1],
                        bytes[pos + 2],
                        bytes[pos + 3],
                        bytes[pos + 4],
                    ]) as usize,
                    5,
                )
            }
            _ => break,
        };
        let start = pos + header;
        if start + len > bytes.len() {
            return Err(Error::MalformedPush {
                offset: pos,
                declared: len,
                available: bytes.len() - start.min(bytes.len()),
            });
        }
        out.extend_from_slice(&bytes[start..start + len]);
        pos = start + len;
    }
    Ok(out)
}

// --- protocol classification ---

/// Ordered prefix rules mapping OP_RETURN metadata to protocol names.
/// The first matching prefix wins. The byte patterns are data, not code:
/// the shipped default table is user-replaceable via a rules file.
pub struct ProtocolTable {
    rules: Vec<(Vec<u8>, String)>,
}

impl ProtocolTable {
    pub fn new(rules: Vec<(Vec<u8>, String)>) -> ProtocolTable {
        ProtocolTable { rules }
    }

    /// The built-in table covering the common OP_RETURN protocols.
    pub fn default_table() -> ProtocolTable {
        ProtocolTable::parse_csv(
            include_str!("../data/protocols.csv"),
            Path::new("<built-in>"),
        )
        .expect("built-in table parses")
    }

    /// Load rules from a `hex_prefix,name` CSV, applied in file order.
    /// Lines starting with `#` are comments.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<ProtocolTable, Error> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path)?;
        ProtocolTable::parse_csv(&content, path)
    }

    fn parse_csv(content: &str, path: &Path) -> Result<ProtocolTable, Error> {
        let mut rules = Vec::new();
        for (idx, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |reason: String| Error::MalformedLine {
                file: path.to_path_buf(),
                line: idx as u64 + 1,
                reason,
            };
            let (prefix_hex, name) = line
                .split_once(',')
                .ok_or_else(|| malformed("no comma".to_string()))?;
            let prefix = hex::decode(prefix_hex.trim())
                .map_err(|e| malformed(format!("bad hex prefix: {e}")))?;
            if prefix.is_empty() {
                return Err(malformed("empty prefix".to_string()));
            }
            let name = name.trim();
            if name.is_empty() {
                return Err(malformed("empty name".to_string()));
            }
            rules.push((prefix, name.to_string()));
        }
        Ok(ProtocolTable { rules })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Name of the first rule whose prefix matches, or "unknown".
    pub fn classify(&self, metadata: &[u8]) -> &str {
        for (prefix, name) in &self.rules {
            if metadata.starts_with(prefix) {
                return name;
            }
        }
        "unknown"
    }
}

pub fn classify_protocol<'t>(table: &'t ProtocolTable, metadata: &[u8]) -> &'t str {
    table.classify(metadata)
}

// --- address extraction ---

pub fn hash160(data: &[u8]) -> [u8; 20] {
    let sha = Sha256::digest(data);
    let mut out = [0u8; 20];
    out.copy_from_slice(&Ripemd160::digest(sha));
    out
}

/// Extract the Base58Check address that can redeem a standard output
/// script: P2PKH, P2SH, or P2PK. Everything else (OP_RETURN, multisig,
/// witness programs, garbage) yields `None`.
pub fn address_of(script_pubkey: &Script, network: Network) -> Option<String> {
    let b = script_pubkey.as_bytes();
    match b {
        // OP_DUP OP_HASH160 <20> OP_EQUALVERIFY OP_CHECKSIG
        [0x76, 0xA9, 0x14, payload @ .., 0x88, 0xAC] if payload.len() == 20 => {
            Some(base58::encode_check(network.p2pkh_version(), payload))
        }
        // OP_HASH160 <20> OP_EQUAL
        [0xA9, 0x14, payload @ .., 0x87] if payload.len() == 20 => {
            Some(base58::encode_check(network.p2sh_version(), payload))
        }
        // <33|65 byte pubkey> OP_CHECKSIG
        [0x21, pubkey @ .., 0xAC] if pubkey.len() == 33 => {
            Some(base58::encode_check(network.p2pkh_version(), &hash160(pubkey)))
        }
        [0x41, pubkey @ .., 0xAC] if pubkey.len() == 65 => {
            Some(base58::encode_check(network.p2pkh_version(), &hash160(pubkey)))
        }
        _ => None,
    }
}
