//! Materialize the five blockchain views by driving the navigator and
//! enrichment modules and streaming records into a sink. Nothing is held
//! in memory: each record goes straight to the sink as the scan advances.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::enrich::{address_of, extract_metadata, is_op_return, ProtocolTable, RateTable, TagMap};
use crate::error::Error;
use crate::model::Network;
use crate::navigator::{deep_scan, output_sum};
use crate::sink::{FieldType, FieldValue, RecordSink, ViewSchema};
use crate::source::{iterate, ChainSource};

/// OP_RETURN outputs were only relayed as standard transactions from this
/// mainnet height on, so the opreturn view starts here by default.
pub const OP_RETURN_DEFAULT_START: u64 = 290_000;

// --- record shapes ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicInput {
    #[serde(rename = "prevTxHash")]
    pub prev_tx_hash: String,
    #[serde(rename = "prevVout")]
    pub prev_vout: u32,
    #[serde(rename = "scriptSig")]
    pub script_sig: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicOutput {
    pub value: i64,
    #[serde(rename = "scriptPubKey")]
    pub script_pub_key: String,
}

/// One row per transaction: hashes, date, and the full input/output lists
/// with scripts rendered as hex strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicRecord {
    #[serde(rename = "txHash")]
    pub tx_hash: String,
    #[serde(rename = "blockHash")]
    pub block_hash: String,
    pub date: NaiveDate,
    pub inputs: Vec<BasicInput>,
    pub outputs: Vec<BasicOutput>,
}

/// One row per OP_RETURN output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpReturnRecord {
    #[serde(rename = "txHash")]
    pub tx_hash: String,
    pub date: NaiveDate,
    pub protocol: String,
    pub metadata: String,
}

/// One row per transaction with its total output value and the day's
/// exchange rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatesRecord {
    #[serde(rename = "txHash")]
    pub tx_hash: String,
    pub date: NaiveDate,
    #[serde(rename = "outputSum")]
    pub output_sum: i64,
    pub rate: f64,
}

/// One row per transaction with its fee (coinbase rows carry fee 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeesRecord {
    #[serde(rename = "blockHash")]
    pub block_hash: String,
    #[serde(rename = "txHash")]
    pub tx_hash: String,
    pub fee: i64,
    pub date: NaiveDate,
    pub rate: f64,
}

/// One row per output paying a tagged address.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagsRecord {
    #[serde(rename = "txHash")]
    pub tx_hash: String,
    pub date: NaiveDate,
    pub value: i64,
    pub address: String,
    pub tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViewKind {
    Basic,
    OpReturn,
    Rates,
    Fees,
    Tags,
}

impl ViewKind {
    pub const ALL: [ViewKind; 5] = [
        ViewKind::Basic,
        ViewKind::OpReturn,
        ViewKind::Rates,
        ViewKind::Fees,
        ViewKind::Tags,
    ];

    pub fn schema(&self) -> ViewSchema {
        match self {
            ViewKind::Basic => ViewSchema {
                view: "basic",
                fields: &[
                    ("txHash", FieldType::Hash),
                    ("blockHash", FieldType::Hash),
                    ("date", FieldType::Date),
                    ("inputs", FieldType::NestedList),
                    ("outputs", FieldType::NestedList),
                ],
            },
            ViewKind::OpReturn => ViewSchema {
                view: "opreturn",
                fields: &[
                    ("txHash", FieldType::Hash),
                    ("date", FieldType::Date),
                    ("protocol", FieldType::String),
                    ("metadata", FieldType::Hex),
                ],
            },
            ViewKind::Rates => ViewSchema {
                view: "rates",
                fields: &[
                    ("txHash", FieldType::Hash),
                    ("date", FieldType::Date),
                    ("outputSum", FieldType::Integer),
                    ("rate", FieldType::Decimal),
                ],
            },
            ViewKind::Fees => ViewSchema {
                view: "fees",
                fields: &[
                    ("blockHash", FieldType::Hash),
                    ("txHash", FieldType::Hash),
                    ("fee", FieldType::Integer),
                    ("date", FieldType::Date),
                    ("rate", FieldType::Decimal),
                ],
            },
            // the relational rendition of the tags view is the
            // tagsoutputs table
            ViewKind::Tags => ViewSchema {
                view: "tagsoutputs",
                fields: &[
                    ("txHash", FieldType::Hash),
                    ("date", FieldType::Date),
                    ("value", FieldType::Integer),
                    ("address", FieldType::String),
                    ("tag", FieldType::String),
                ],
            },
        }
    }
}

impl std::str::FromStr for ViewKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<ViewKind, Error> {
        match s {
            "basic" => Ok(ViewKind::Basic),
            "opreturn" => Ok(ViewKind::OpReturn),
            "rates" => Ok(ViewKind::Rates),
            "fees" => Ok(ViewKind::Fees),
            "tags" => Ok(ViewKind::Tags),
            other => Err(Error::InvalidSpec(format!("unknown view {other:?}"))),
        }
    }
}

/// A record of any of the five views. Serialization is untagged: the JSON
/// shape is exactly the underlying record's.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ViewRecord {
    Basic(BasicRecord),
    OpReturn(OpReturnRecord),
    Rates(RatesRecord),
    Fees(FeesRecord),
    Tags(TagsRecord),
}

impl ViewRecord {
    pub fn kind(&self) -> ViewKind {
        match self {
            ViewRecord::Basic(_) => ViewKind::Basic,
            ViewRecord::OpReturn(_) => ViewKind::OpReturn,
            ViewRecord::Rates(_) => ViewKind::Rates,
            ViewRecord::Fees(_) => ViewKind::Fees,
            ViewRecord::Tags(_) => ViewKind::Tags,
        }
    }

    pub fn from_json(kind: ViewKind, json: &str) -> Result<ViewRecord, serde_json::Error> {
        Ok(match kind {
            ViewKind::Basic => ViewRecord::Basic(serde_json::from_str(json)?),
            ViewKind::OpReturn => ViewRecord::OpReturn(serde_json::from_str(json)?),
            ViewKind::Rates => ViewRecord::Rates(serde_json::from_str(json)?),
            ViewKind::Fees => ViewRecord::Fees(serde_json::from_str(json)?),
            ViewKind::Tags => ViewRecord::Tags(serde_json::from_str(json)?),
        })
    }

    /// Field values in schema order, for column-oriented sinks.
    pub fn field_values(&self) -> Vec<FieldValue> {
        fn json(v: impl Serialize) -> serde_json::Value {
            serde_json::to_value(v).expect("records serialize")
        }
        match self {
            ViewRecord::Basic(r) => vec![
                FieldValue::Hash(r.tx_hash.clone()),
                FieldValue::Hash(r.block_hash.clone()),
                FieldValue::Date(r.date),
                FieldValue::Nested(json(&r.inputs)),
                FieldValue::Nested(json(&r.outputs)),
            ],
            ViewRecord::OpReturn(r) => vec![
                FieldValue::Hash(r.tx_hash.clone()),
                FieldValue::Date(r.date),
                FieldValue::Str(r.protocol.clone()),
                FieldValue::Hex(r.metadata.clone()),
            ],
            ViewRecord::Rates(r) => vec![
                FieldValue::Hash(r.tx_hash.clone()),
                FieldValue::Date(r.date),
                FieldValue::Int(r.output_sum),
                FieldValue::Dec(r.rate),
            ],
            ViewRecord::Fees(r) => vec![
                FieldValue::Hash(r.block_hash.clone()),
                FieldValue::Hash(r.tx_hash.clone()),
                FieldValue::Int(r.fee),
                FieldValue::Date(r.date),
                FieldValue::Dec(r.rate),
            ],
            ViewRecord::Tags(r) => vec![
                FieldValue::Hash(r.tx_hash.clone()),
                FieldValue::Date(r.date),
                FieldValue::Int(r.value),
                FieldValue::Str(r.address.clone()),
                FieldValue::Str(r.tag.clone()),
            ],
        }
    }
}

/// An inclusive height interval; unset bounds default to the whole chain.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScanRange {
    pub start: Option<u64>,
    pub end: Option<u64>,
}

impl ScanRange {
    pub fn new(start: Option<u64>, end: Option<u64>) -> ScanRange {
        ScanRange { start, end }
    }

    fn resolve(&self, source: &dyn ChainSource) -> Result<(u64, u64), Error> {
        let best = source.best_height()?;
        let start = self.start.unwrap_or(0);
        let end = self.end.unwrap_or(best);
        if start > end || end > best {
            return Err(Error::RangeInvalid { start, end, best });
        }
        Ok((start, end))
    }
}

/// What a view build did, rendered as JSON on the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct ViewReport {
    pub view: String,
    pub blocks: u64,
    pub txs: u64,
    pub records: u64,
    pub warnings: Vec<String>,
}

impl ViewReport {
    fn new(kind: ViewKind) -> ViewReport {
        ViewReport {
            view: kind.schema().view.to_string(),
            blocks: 0,
            txs: 0,
            records: 0,
            warnings: Vec::new(),
        }
    }
}

/// One BasicRecord per transaction in the range, in scan order.
pub fn build_basic(
    source: &dyn ChainSource,
    range: ScanRange,
    sink: &mut dyn RecordSink,
) -> Result<ViewReport, Error> {
    let (start, end) = range.resolve(source)?;
    let mut report = ViewReport::new(ViewKind::Basic);
    sink.open(&ViewKind::Basic.schema())?;
    for item in iterate(source, start, end)? {
        let (_, block) = item?;
        report.blocks += 1;
        for tx in &block.txs {
            report.txs += 1;
            let record = BasicRecord {
                tx_hash: tx.txid.to_hex(),
                block_hash: block.hash.to_hex(),
                date: block.date(),
                inputs: tx
                    .inputs
                    .iter()
                    .map(|input| BasicInput {
                        prev_tx_hash: input.prevout.txid.to_hex(),
                        prev_vout: input.prevout.vout,
                        script_sig: input.script_sig.to_hex(),
                    })
                    .collect(),
                outputs: tx
                    .outputs
                    .iter()
                    .map(|output| BasicOutput {
                        value: output.value.sat(),
                        script_pub_key: output.script_pubkey.to_hex(),
                    })
                    .collect(),
            };
            sink.write(&ViewRecord::Basic(record))?;
            report.records += 1;
        }
    }
    sink.close()?;
    Ok(report)
}

/// One OpReturnRecord per OP_RETURN output. Without an explicit start the
/// scan begins at height 290,000, clamped (with a warning) on shorter
/// chains.
pub fn build_opreturn(
    source: &dyn ChainSource,
    range: ScanRange,
    table: &ProtocolTable,
    sink: &mut dyn RecordSink,
) -> Result<ViewReport, Error> {
    let mut report = ViewReport::new(ViewKind::OpReturn);
    let range = match range.start {
        Some(_) => range,
        None => {
            let best = source.best_height()?;
            let start = OP_RETURN_DEFAULT_START.min(best);
            if start < OP_RETURN_DEFAULT_START {
                report.warnings.push(format!(
                    "default start {OP_RETURN_DEFAULT_START} clamped to best height {best}"
                ));
            }
            ScanRange::new(Some(start), range.end)
        }
    };
    let (start, end) = range.resolve(source)?;
    sink.open(&ViewKind::OpReturn.schema())?;
    for item in iterate(source, start, end)? {
        let (_, block) = item?;
        report.blocks += 1;
        for tx in &block.txs {
            report.txs += 1;
            for output in &tx.outputs {
                if !is_op_return(&output.script_pubkey) {
                    continue;
                }
                let metadata = extract_metadata(&output.script_pubkey)?;
                let record = OpReturnRecord {
                    tx_hash: tx.txid.to_hex(),
                    date: block.date(),
                    protocol: table.classify(&metadata).to_string(),
                    metadata: hex::encode(&metadata),
                };
                sink.write(&ViewRecord::OpReturn(record))?;
                report.records += 1;
            }
        }
    }
    sink.close()?;
    Ok(report)
}

/// One RatesRecord per transaction; the rate table must cover every block
/// date in the range or the build aborts naming the offending date.
pub fn build_rates(
    source: &dyn ChainSource,
    range: ScanRange,
    rates: &mut RateTable,
    sink: &mut dyn RecordSink,
) -> Result<ViewReport, Error> {
    let (start, end) = range.resolve(source)?;
    let mut report = ViewReport::new(ViewKind::Rates);
    sink.open(&ViewKind::Rates.schema())?;
    for item in iterate(source, start, end)? {
        let (_, block) = item?;
        report.blocks += 1;
        let rate = rates.get(block.date())?;
        for tx in &block.txs {
            report.txs += 1;
            let record = RatesRecord {
                tx_hash: tx.txid.to_hex(),
                date: block.date(),
                output_sum: output_sum(tx).sat(),
                rate,
            };
            sink.write(&ViewRecord::Rates(record))?;
            report.records += 1;
        }
    }
    sink.close()?;
    Ok(report)
}

/// One FeesRecord per transaction, fees from the deep scan; must start at
/// genesis.
pub fn build_fees(
    source: &dyn ChainSource,
    end: Option<u64>,
    rates: &mut RateTable,
    sink: &mut dyn RecordSink,
) -> Result<ViewReport, Error> {
    let mut report = ViewReport::new(ViewKind::Fees);
    sink.open(&ViewKind::Fees.schema())?;
    let mut records = 0u64;
    let scan = deep_scan(source, 0, end, |_, block, valuations| {
        let date = block.date();
        let rate = rates.get(date)?;
        for valuation in valuations {
            let record = FeesRecord {
                block_hash: block.hash.to_hex(),
                tx_hash: valuation.txid.to_hex(),
                fee: valuation.fee.sat(),
                date,
                rate,
            };
            sink.write(&ViewRecord::Fees(record))?;
            records += 1;
        }
        Ok(())
    })?;
    sink.close()?;
    report.blocks = scan.blocks;
    report.txs = scan.txs;
    report.records = records;
    if scan.warnings > 0 {
        report
            .warnings
            .push(format!("{} negative fees flagged", scan.warnings));
    }
    Ok(report)
}

/// One TagsRecord per output paying a tagged address; address-less and
/// untagged outputs are skipped.
pub fn build_tags(
    source: &dyn ChainSource,
    range: ScanRange,
    tags: &TagMap,
    network: Network,
    sink: &mut dyn RecordSink,
) -> Result<ViewReport, Error> {
    let (start, end) = range.resolve(source)?;
    let mut report = ViewReport::new(ViewKind::Tags);
    sink.open(&ViewKind::Tags.schema())?;
    for item in iterate(source, start, end)? {
        let (_, block) = item?;
        report.blocks += 1;
        for tx in &block.txs {
            report.txs += 1;
            for output in &tx.outputs {
                let Some(address) = address_of(&output.script_pubkey, network) else {
                    continue;
                };
                let Some(tag) = tags.get(&address) else {
                    continue;
                };
                let record = TagsRecord {
                    tx_hash: tx.txid.to_hex(),
                    date: block.date(),
                    value: output.value.sat(),
                    address,
                    tag: tag.to_string(),
                };
                sink.write(&ViewRecord::Tags(record))?;
                report.records += 1;
            }
        }
    }
    sink.close()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        Amount, Block, BlockHeader, Hash256, OutPoint, Script, Transaction, TxInput, TxOutput,
    };
    use crate::sink::DocumentSink;
    use crate::source::MemorySource;

    fn op_return_output(metadata: &[u8]) -> TxOutput {
        let mut bytes = vec![0x6A, metadata.len() as u8];
        bytes.extend_from_slice(metadata);
        TxOutput {
            value: Amount::ZERO,
            script_pubkey: Script::new(bytes),
        }
    }

    fn single_block_source(txs: Vec<Transaction>) -> MemorySource {
        let header = BlockHeader {
            version: 2,
            prev_hash: Hash256::ZERO,
            merkle_root: Hash256::from_bytes([2; 32]),
            time: 1_483_228_800,
            bits: 0x207F_FFFF,
            nonce: 0,
        };
        MemorySource::new(vec![Block::from_parts(header, txs)])
    }

    #[test]
    fn multiple_op_returns_in_one_tx_emit_one_record_each() {
        let coinbase = Transaction::from_parts(
            2,
            vec![TxInput {
                prevout: OutPoint::COINBASE,
                script_sig: Script::new(vec![0x00]),
                sequence: 0xFFFF_FFFF,
                witness: Vec::new(),
            }],
            vec![
                TxOutput {
                    value: Amount::from_sat(5_000_000_000),
                    script_pubkey: Script::new(vec![0x51]),
                },
                op_return_output(b"omni one"),
                op_return_output(b"EW two"),
            ],
            0,
        );
        let source = single_block_source(vec![coinbase]);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("op.jsonl");
        let mut sink = DocumentSink::create(&out).unwrap();
        let report = build_opreturn(
            &source,
            ScanRange::new(Some(0), None),
            &crate::enrich::ProtocolTable::default_table(),
            &mut sink,
        )
        .unwrap();
        assert_eq!(report.records, 2);

        let records = crate::sink::read_jsonl(&out, ViewKind::OpReturn).unwrap();
        let protocols: Vec<&str> = records
            .iter()
            .map(|r| match r {
                ViewRecord::OpReturn(o) => o.protocol.as_str(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(protocols, vec!["omni", "eternitywall"]);

        // an OP_RETURN output never yields a tags record even when every
        // known address is tagged
        let mut tag_sink = DocumentSink::create(dir.path().join("t.jsonl")).unwrap();
        let tags = crate::enrich::TagMap::from_entries([(
            "everything".to_string(),
            "tag".to_string(),
        )]);
        let report = build_tags(
            &source,
            ScanRange::default(),
            &tags,
            crate::model::Network::Regtest,
            &mut tag_sink,
        )
        .unwrap();
        assert_eq!(report.records, 0);
    }

    #[test]
    fn zero_records_still_creates_an_empty_file() {
        let coinbase = Transaction::from_parts(
            2,
            vec![TxInput {
                prevout: OutPoint::COINBASE,
                script_sig: Script::new(vec![0x01]),
                sequence: 0xFFFF_FFFF,
                witness: Vec::new(),
            }],
            vec![TxOutput {
                value: Amount::from_sat(5_000_000_000),
                script_pubkey: Script::new(vec![0x51]),
            }],
            0,
        );
        let source = single_block_source(vec![coinbase]);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("empty.jsonl");
        let mut sink = DocumentSink::create(&out).unwrap();
        let report = build_opreturn(
            &source,
            ScanRange::new(Some(0), None),
            &crate::enrich::ProtocolTable::default_table(),
            &mut sink,
        )
        .unwrap();
        assert_eq!(report.records, 0);
        assert!(out.exists());
        assert_eq!(std::fs::metadata(&out).unwrap().len(), 0);
    }
}
