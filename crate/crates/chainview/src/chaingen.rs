//! Deterministic synthetic blockchain generator. The generator owns the
//! ground truth — per-transaction fees, coinbase claims, live-UTXO counts,
//! planted OP_RETURN metadata, tagged payments, per-date aggregates — so
//! scans and views can be checked against an independent oracle.
//!
//! Identical specs produce byte-identical chains. Scripts use only the
//! forms the enrichment module recognizes (P2PKH, P2PK, P2SH, OP_RETURN);
//! signatures are dummy bytes since scripts are never executed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::base58;
use crate::enrich::ProtocolTable;
use crate::error::Error;
use crate::model::{
    date_of, double_sha256, serialize_block, Amount, Block, BlockHeader, Hash256, Network,
    OutPoint, Script, Transaction, TxInput, TxOutput,
};
use crate::navigator::block_subsidy;
use crate::parser::parse_block_file_bytes;
use crate::source::MemorySource;

/// Identifier of the PRNG backing generation, recorded in the ground truth.
pub const PRNG_ID: &str = "chacha8";

/// The tagged identities every generated chain can pay. The tag fixture for
/// a chain is exactly these pairs.
const TAG_NAMES: [&str; 4] = [
    "SatoshiDICE 48%",
    "SatoshiDICE 24%",
    "Linux Mint Donations",
    "Eternity Wall Notary",
];

/// Metadata prefixes planted on OP_RETURN outputs (with a trailing random
/// payload); `None` plants unprefixed random bytes.
const OPRETURN_PREFIXES: [Option<&[u8]>; 6] = [
    Some(b"omni"),
    Some(b"DOCPROOF"),
    Some(b"EW"),
    Some(b"CC"),
    Some(b"Factom!!"),
    None,
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSpec {
    pub seed: u64,
    pub blocks: u64,
    /// Inclusive range of non-coinbase transactions per block.
    pub txs_per_block: (u32, u32),
    /// Inclusive satoshi range fees are drawn from.
    pub fee_range: (i64, i64),
    pub opreturn_rate: f64,
    pub tagged_payment_rate: f64,
    pub segwit_rate: f64,
    pub intra_block_spend_rate: f64,
    /// Plant one orphan block at this height (the main chain keeps going
    /// and wins).
    pub fork_at: Option<u64>,
    pub network: Network,
    pub start_time: u32,
    pub block_interval_secs: u32,
    /// Chance of a zero-padding run after a block record.
    pub pad_rate: f64,
}

impl Default for GenSpec {
    fn default() -> GenSpec {
        GenSpec {
            seed: 1,
            blocks: 10,
            txs_per_block: (2, 6),
            fee_range: (500, 25_000),
            opreturn_rate: 0.15,
            tagged_payment_rate: 0.2,
            segwit_rate: 0.25,
            intra_block_spend_rate: 0.1,
            fork_at: None,
            network: Network::Regtest,
            // 2017-01-01 00:00:00 UTC; 600s blocks give date-grouped
            // analytics multi-day structure
            start_time: 1_483_228_800,
            block_interval_secs: 600,
            pad_rate: 0.1,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), Error> {
        if self.blocks == 0 {
            return Err(Error::InvalidSpec("blocks must be > 0".to_string()));
        }
        if self.txs_per_block.0 > self.txs_per_block.1 {
            return Err(Error::InvalidSpec("txs_per_block range inverted".to_string()));
        }
        if self.fee_range.0 < 0 || self.fee_range.0 > self.fee_range.1 {
            return Err(Error::InvalidSpec("fee_range invalid".to_string()));
        }
        for (name, rate) in [
            ("opreturn_rate", self.opreturn_rate),
            ("tagged_payment_rate", self.tagged_payment_rate),
            ("segwit_rate", self.segwit_rate),
            ("intra_block_spend_rate", self.intra_block_spend_rate),
            ("pad_rate", self.pad_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidSpec(format!("{name} outside [0, 1]")));
            }
        }
        if let Some(f) = self.fork_at {
            if f < 1 || f + 2 > self.blocks {
                return Err(Error::InvalidSpec(format!(
                    "fork_at {f} needs 1 <= fork_at <= blocks - 2"
                )));
            }
        }
        if self.block_interval_secs == 0 {
            return Err(Error::InvalidSpec("block_interval_secs must be > 0".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTx {
    pub height: u64,
    pub txid: String,
    pub fee: i64,
    pub input_sum: i64,
    pub output_sum: i64,
    pub is_coinbase: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthOpReturn {
    pub height: u64,
    pub txid: String,
    pub metadata: String,
    pub protocol: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTagged {
    pub height: u64,
    pub txid: String,
    pub vout: u32,
    pub address: String,
    pub tag: String,
    pub value: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDaily {
    pub date: String,
    pub txs: u64,
    pub inputs: u64,
    pub outputs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagEntry {
    pub address: String,
    pub tag: String,
}

/// Everything the generator knows about the chain it produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub prng: String,
    pub seed: u64,
    pub network: Network,
    pub blocks: u64,
    pub total_txs: u64,
    pub orphans: u64,
    /// Main-chain block hashes by height, display order.
    pub block_hashes: Vec<String>,
    /// Per height: subsidy + fees the coinbase claims.
    pub coinbase_claims: Vec<i64>,
    /// Per height: live UTXO count after processing the block.
    pub utxo_live: Vec<u64>,
    pub txs: Vec<TruthTx>,
    pub opreturns: Vec<TruthOpReturn>,
    pub tagged: Vec<TruthTagged>,
    pub tag_pool: Vec<TagEntry>,
    pub daily: Vec<TruthDaily>,
}

impl GroundTruth {
    /// The tag fixture matching this chain, in the tags-file format.
    pub fn tags_tsv(&self) -> String {
        let mut out = String::new();
        for entry in &self.tag_pool {
            out.push_str(&entry.address);
            out.push('\t');
            out.push_str(&entry.tag);
            out.push('\n');
        }
        out
    }
}

/// A generated chain: raw blk-style file bytes plus the ground truth.
pub struct Generated {
    pub file_bytes: Vec<u8>,
    pub truth: GroundTruth,
}

impl Generated {
    /// The main-chain blocks in height order (orphans filtered out; their
    /// records sit after the main chain in the file, so file order is
    /// height order here).
    pub fn main_chain_blocks(&self) -> Result<Vec<Block>, Error> {
        let wanted: std::collections::HashSet<&str> =
            self.truth.block_hashes.iter().map(String::as_str).collect();
        let all = parse_block_file_bytes(&self.file_bytes, self.truth.network.magic())?;
        Ok(all
            .into_iter()
            .filter(|b| wanted.contains(b.hash.to_hex().as_str()))
            .collect())
    }

    pub fn memory_source(&self) -> Result<MemorySource, Error> {
        Ok(MemorySource::new(self.main_chain_blocks()?))
    }
}

fn p2pkh_script(payload: &[u8; 20]) -> Script {
    let mut bytes = Vec::with_capacity(25);
    bytes.extend_from_slice(&[0x76, 0xA9, 0x14]);
    bytes.extend_from_slice(payload);
    bytes.extend_from_slice(&[0x88, 0xAC]);
    Script::new(bytes)
}

fn p2sh_script(payload: &[u8; 20]) -> Script {
    let mut bytes = Vec::with_capacity(23);
    bytes.extend_from_slice(&[0xA9, 0x14]);
    bytes.extend_from_slice(payload);
    bytes.push(0x87);
    Script::new(bytes)
}

fn p2pk_script(pubkey: &[u8; 33]) -> Script {
    let mut bytes = Vec::with_capacity(35);
    bytes.push(0x21);
    bytes.extend_from_slice(pubkey);
    bytes.push(0xAC);
    Script::new(bytes)
}

fn op_return_script(metadata: &[u8]) -> Script {
    assert!(metadata.len() <= 75);
    let mut bytes = Vec::with_capacity(metadata.len() + 2);
    bytes.push(0x6A);
    bytes.push(metadata.len() as u8);
    bytes.extend_from_slice(metadata);
    Script::new(bytes)
}

fn merkle_root(txids: &[Hash256]) -> Hash256 {
    let mut level: Vec<Hash256> = txids.to_vec();
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            level.push(*level.last().unwrap());
        }
        level = level
            .chunks(2)
            .map(|pair| {
                let mut buf = [0u8; 64];
                buf[..32].copy_from_slice(pair[0].as_bytes());
                buf[32..].copy_from_slice(pair[1].as_bytes());
                double_sha256(&buf)
            })
            .collect();
    }
    level[0]
}

struct TaggedIdentity {
    payload: [u8; 20],
    address: String,
    tag: String,
}

fn tagged_identities(network: Network) -> Vec<TaggedIdentity> {
    TAG_NAMES
        .iter()
        .map(|tag| {
            let digest = Sha256::digest(format!("chainview-tag:{tag}"));
            let mut payload = [0u8; 20];
            payload.copy_from_slice(&digest[..20]);
            TaggedIdentity {
                payload,
                address: base58::encode_check(network.p2pkh_version(), &payload),
                tag: tag.to_string(),
            }
        })
        .collect()
}

/// Spendable outputs the generator may pick as inputs.
struct Pool {
    entries: Vec<(OutPoint, i64)>,
}

impl Pool {
    fn pick(&mut self, rng: &mut ChaCha8Rng) -> (OutPoint, i64) {
        let idx = rng.gen_range(0..self.entries.len());
        self.entries.swap_remove(idx)
    }

    fn remove(&mut self, outpoint: &OutPoint) -> Option<(OutPoint, i64)> {
        self.entries
            .iter()
            .position(|(op, _)| op == outpoint)
            .map(|idx| self.entries.swap_remove(idx))
    }
}

pub fn generate(spec: &GenSpec) -> Result<Generated, Error> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let protocol_table = ProtocolTable::default_table();
    let identities = tagged_identities(spec.network);
    let magic = spec.network.magic();

    let mut truth = GroundTruth {
        prng: PRNG_ID.to_string(),
        seed: spec.seed,
        network: spec.network,
        blocks: spec.blocks,
        total_txs: 0,
        orphans: 0,
        block_hashes: Vec::with_capacity(spec.blocks as usize),
        coinbase_claims: Vec::with_capacity(spec.blocks as usize),
        utxo_live: Vec::with_capacity(spec.blocks as usize),
        txs: Vec::new(),
        opreturns: Vec::new(),
        tagged: Vec::new(),
        tag_pool: identities
            .iter()
            .map(|id| TagEntry {
                address: id.address.clone(),
                tag: id.tag.clone(),
            })
            .collect(),
        daily: Vec::new(),
    };

    let mut file_bytes: Vec<u8> = Vec::new();
    let mut pool = Pool {
        entries: Vec::new(),
    };
    let mut utxo_count: u64 = 0;
    let mut prev_hash = Hash256::ZERO;
    let mut main_hashes: Vec<Hash256> = Vec::with_capacity(spec.blocks as usize);
    // date string -> (txs, inputs, outputs), filled in height order so the
    // final list is date-ascending
    let mut daily: Vec<TruthDaily> = Vec::new();

    let mut random_payload = |rng: &mut ChaCha8Rng| {
        let mut payload = [0u8; 20];
        rng.fill(&mut payload);
        payload
    };

    for height in 0..spec.blocks {
        let time = spec.start_time + (height as u32) * spec.block_interval_secs;
        let date = date_of(time).to_string();
        let mut block_created: Vec<(OutPoint, i64)> = Vec::new();
        let mut regular_txs: Vec<Transaction> = Vec::new();
        let mut block_fees: i64 = 0;

        let tx_target = rng.gen_range(spec.txs_per_block.0..=spec.txs_per_block.1);
        for _ in 0..tx_target {
            if pool.entries.is_empty() {
                break;
            }

            // gather inputs
            let mut picked: Vec<(OutPoint, i64)> = Vec::new();
            let want_intra =
                spec.intra_block_spend_rate > 0.0 && rng.gen_bool(spec.intra_block_spend_rate);
            if want_intra && !block_created.is_empty() {
                let idx = rng.gen_range(0..block_created.len());
                let (outpoint, value) = block_created.swap_remove(idx);
                pool.remove(&outpoint)
                    .expect("block-created outputs stay in the pool until spent");
                picked.push((outpoint, value));
            }
            let extra_target = rng.gen_range(1..=3usize);
            while picked.len() < extra_target && !pool.entries.is_empty() {
                let (outpoint, value) = pool.pick(&mut rng);
                block_created.retain(|(op, _)| op != &outpoint);
                picked.push((outpoint, value));
            }

            let fee_sample = rng.gen_range(spec.fee_range.0..=spec.fee_range.1);
            let mut n_out = rng.gen_range(1..=3usize);

            // top up poor inputs so the sampled fee can be paid exactly
            let mut vin: i64 = picked.iter().map(|(_, v)| v).sum();
            while vin < fee_sample + n_out as i64 && !pool.entries.is_empty() && picked.len() < 8
            {
                let (outpoint, value) = pool.pick(&mut rng);
                block_created.retain(|(op, _)| op != &outpoint);
                vin += value;
                picked.push((outpoint, value));
            }
            let fee = fee_sample.min(vin - n_out as i64).max(0);
            let amount = vin - fee;
            n_out = n_out.min(amount as usize).max(1);

            // split amount into n_out values, each at least 1 satoshi
            let mut values: Vec<i64> = Vec::with_capacity(n_out);
            let mut remaining = amount;
            for left in (1..n_out as i64).rev() {
                let v = rng.gen_range(1..=remaining - left);
                values.push(v);
                remaining -= v;
            }
            values.push(remaining);

            let tagged_choice = if rng.gen_bool(spec.tagged_payment_rate) {
                Some(rng.gen_range(0..identities.len()))
            } else {
                None
            };

            let mut outputs: Vec<TxOutput> = Vec::with_capacity(n_out + 1);
            for (i, value) in values.iter().enumerate() {
                let script = match (i, tagged_choice) {
                    (0, Some(idx)) => p2pkh_script(&identities[idx].payload),
                    _ => match rng.gen_range(0..100u32) {
                        0..=69 => p2pkh_script(&random_payload(&mut rng)),
                        70..=84 => {
                            let mut pubkey = [0u8; 33];
                            pubkey[0] = 0x02;
                            rng.fill(&mut pubkey[1..]);
                            p2pk_script(&pubkey)
                        }
                        _ => p2sh_script(&random_payload(&mut rng)),
                    },
                };
                outputs.push(TxOutput {
                    value: Amount::from_sat(*value),
                    script_pubkey: script,
                });
            }

            let opreturn_meta = if rng.gen_bool(spec.opreturn_rate) {
                let prefix = OPRETURN_PREFIXES[rng.gen_range(0..OPRETURN_PREFIXES.len())];
                let suffix_len = rng.gen_range(2..=10usize);
                let mut metadata: Vec<u8> = prefix.map(<[u8]>::to_vec).unwrap_or_default();
                for _ in 0..suffix_len {
                    metadata.push(rng.gen());
                }
                outputs.push(TxOutput {
                    value: Amount::ZERO,
                    script_pubkey: op_return_script(&metadata),
                });
                Some(metadata)
            } else {
                None
            };

            let with_witness = rng.gen_bool(spec.segwit_rate);
            let inputs: Vec<TxInput> = picked
                .iter()
                .map(|(outpoint, _)| {
                    let mut sig = vec![0x08u8];
                    for _ in 0..8 {
                        sig.push(rng.gen());
                    }
                    let witness = if with_witness {
                        (0..rng.gen_range(1..=2usize))
                            .map(|_| {
                                let len = rng.gen_range(8..=32usize);
                                (0..len).map(|_| rng.gen()).collect()
                            })
                            .collect()
                    } else {
                        Vec::new()
                    };
                    TxInput {
                        prevout: *outpoint,
                        script_sig: Script::new(sig),
                        sequence: 0xFFFF_FFFF,
                        witness,
                    }
                })
                .collect();

            let tx = Transaction::from_parts(2, inputs, outputs, 0);

            utxo_count -= picked.len() as u64;
            utxo_count += tx.outputs.len() as u64;
            for (vout, output) in tx.outputs.iter().enumerate() {
                if output.value.sat() > 0 {
                    let outpoint = OutPoint::new(tx.txid, vout as u32);
                    pool.entries.push((outpoint, output.value.sat()));
                    block_created.push((outpoint, output.value.sat()));
                }
            }

            block_fees += fee;
            truth.txs.push(TruthTx {
                height,
                txid: tx.txid.to_hex(),
                fee,
                input_sum: vin,
                output_sum: amount,
                is_coinbase: false,
            });
            if let Some(metadata) = opreturn_meta {
                truth.opreturns.push(TruthOpReturn {
                    height,
                    txid: tx.txid.to_hex(),
                    protocol: protocol_table.classify(&metadata).to_string(),
                    metadata: hex::encode(&metadata),
                });
            }
            if let Some(idx) = tagged_choice {
                truth.tagged.push(TruthTagged {
                    height,
                    txid: tx.txid.to_hex(),
                    vout: 0,
                    address: identities[idx].address.clone(),
                    tag: identities[idx].tag.clone(),
                    value: values[0],
                });
            }
            regular_txs.push(tx);
        }

        // coinbase claims subsidy plus the block's total fees
        let claim = block_subsidy(height).sat() + block_fees;
        let coinbase = build_coinbase(height, claim, &mut rng, &mut random_payload);
        utxo_count += coinbase.outputs.len() as u64;
        for (vout, output) in coinbase.outputs.iter().enumerate() {
            pool.entries
                .push((OutPoint::new(coinbase.txid, vout as u32), output.value.sat()));
        }
        truth.txs.push(TruthTx {
            height,
            txid: coinbase.txid.to_hex(),
            fee: 0,
            input_sum: claim,
            output_sum: claim,
            is_coinbase: true,
        });

        let mut txs = Vec::with_capacity(1 + regular_txs.len());
        txs.push(coinbase);
        txs.append(&mut regular_txs);

        let txids: Vec<Hash256> = txs.iter().map(|t| t.txid).collect();
        let header = BlockHeader {
            version: 2,
            prev_hash,
            merkle_root: merkle_root(&txids),
            time,
            bits: 0x207F_FFFF,
            nonce: rng.gen(),
        };
        let block = Block::from_parts(header, txs);
        prev_hash = block.hash;
        main_hashes.push(block.hash);

        // accounting
        truth.total_txs += block.txs.len() as u64;
        truth.block_hashes.push(block.hash.to_hex());
        truth.coinbase_claims.push(claim);
        truth.utxo_live.push(utxo_count);
        match daily.last_mut() {
            Some(row) if row.date == date => {
                row.txs += block.txs.len() as u64;
                row.inputs += block.txs.iter().map(|t| t.inputs.len() as u64).sum::<u64>();
                row.outputs += block.txs.iter().map(|t| t.outputs.len() as u64).sum::<u64>();
            }
            _ => daily.push(TruthDaily {
                date: date.clone(),
                txs: block.txs.len() as u64,
                inputs: block.txs.iter().map(|t| t.inputs.len() as u64).sum(),
                outputs: block.txs.iter().map(|t| t.outputs.len() as u64).sum(),
            }),
        }

        // file record, with the occasional zero-padding run
        let payload = serialize_block(&block);
        file_bytes.extend_from_slice(&magic);
        file_bytes.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        file_bytes.extend_from_slice(&payload);
        if spec.pad_rate > 0.0 && rng.gen_bool(spec.pad_rate) {
            let run = rng.gen_range(1..=16usize);
            file_bytes.extend(std::iter::repeat_n(0u8, run));
        }
    }
    truth.daily = daily;

    // optional one-block orphan branch; the main chain is longer and wins
    if let Some(fork_height) = spec.fork_at {
        let parent = main_hashes[fork_height as usize - 1];
        let time = spec.start_time + (fork_height as u32) * spec.block_interval_secs;
        let claim = block_subsidy(fork_height).sat();
        let coinbase = build_coinbase(fork_height, claim, &mut rng, &mut random_payload);
        let header = BlockHeader {
            version: 2,
            prev_hash: parent,
            merkle_root: merkle_root(&[coinbase.txid]),
            time,
            bits: 0x207F_FFFF,
            nonce: rng.gen(),
        };
        let block = Block::from_parts(header, vec![coinbase]);
        let payload = serialize_block(&block);
        file_bytes.extend_from_slice(&magic);
        file_bytes.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        file_bytes.extend_from_slice(&payload);
        truth.orphans = 1;
    }

    Ok(Generated { file_bytes, truth })
}

fn build_coinbase(
    height: u64,
    claim: i64,
    rng: &mut ChaCha8Rng,
    random_payload: &mut impl FnMut(&mut ChaCha8Rng) -> [u8; 20],
) -> Transaction {
    let mut script_sig = Vec::with_capacity(12);
    script_sig.extend_from_slice(&(height as u32).to_le_bytes());
    for _ in 0..4 {
        script_sig.push(rng.gen());
    }

    let two_outputs = claim > 1 && rng.gen_bool(0.3);
    let mut outputs = Vec::with_capacity(2);
    if two_outputs {
        let first = rng.gen_range(1..claim);
        outputs.push(TxOutput {
            value: Amount::from_sat(first),
            script_pubkey: p2pkh_script(&random_payload(rng)),
        });
        outputs.push(TxOutput {
            value: Amount::from_sat(claim - first),
            script_pubkey: p2pkh_script(&random_payload(rng)),
        });
    } else {
        outputs.push(TxOutput {
            value: Amount::from_sat(claim),
            script_pubkey: p2pkh_script(&random_payload(rng)),
        });
    }

    Transaction::from_parts(
        2,
        vec![TxInput {
            prevout: OutPoint::COINBASE,
            script_sig: Script::new(script_sig),
            sequence: 0xFFFF_FFFF,
            witness: Vec::new(),
        }],
        outputs,
        0,
    )
}
