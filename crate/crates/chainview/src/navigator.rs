//! The deep-scan engine: a single forward pass that maintains the
//! outpoint → value map so input values (absent from raw transactions) can
//! be resolved, yielding per-transaction fees and coinbase valuations.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::Error;
use crate::model::{Amount, Block, Hash256, OutPoint, Transaction};
use crate::source::{iterate, ChainSource};

pub const HALVING_INTERVAL: u64 = 210_000;
pub const INITIAL_SUBSIDY: i64 = 50 * crate::model::SATS_PER_BTC;

/// Newly minted reward at `height`: the initial 50 BTC halved every
/// 210,000 blocks, reaching zero once the shift exhausts the value.
pub fn block_subsidy(height: u64) -> Amount {
    let halvings = height / HALVING_INTERVAL;
    if halvings >= 63 {
        return Amount::ZERO;
    }
    Amount::from_sat(INITIAL_SUBSIDY >> halvings)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct UtxoStats {
    pub inserts: u64,
    pub removals: u64,
    pub peak_size: usize,
}

/// Outpoint → value map backing the deep scan. Spent entries are removed,
/// so after height h it holds exactly the unspent outputs of blocks 0..=h.
pub struct UtxoMap {
    entries: HashMap<OutPoint, Amount>,
    stats: UtxoStats,
}

impl Default for UtxoMap {
    fn default() -> Self {
        Self::new()
    }
}

impl UtxoMap {
    pub fn new() -> UtxoMap {
        UtxoMap {
            entries: HashMap::new(),
            stats: UtxoStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> UtxoStats {
        self.stats
    }

    pub fn get(&self, outpoint: &OutPoint) -> Option<Amount> {
        self.entries.get(outpoint).copied()
    }

    pub fn insert(&mut self, outpoint: OutPoint, value: Amount) {
        self.entries.insert(outpoint, value);
        self.stats.inserts += 1;
        self.stats.peak_size = self.stats.peak_size.max(self.entries.len());
    }

    /// Remove and return a spent entry.
    pub fn spend(&mut self, outpoint: &OutPoint) -> Result<Amount, Error> {
        match self.entries.remove(outpoint) {
            Some(value) => {
                self.stats.removals += 1;
                Ok(value)
            }
            None => Err(Error::MissingPrevout {
                outpoint: *outpoint,
            }),
        }
    }
}

pub fn output_sum(tx: &Transaction) -> Amount {
    tx.outputs.iter().map(|o| o.value).sum()
}

/// Sum of the values the inputs redeem, looked up (without removal) in the
/// map. Fails with `MissingPrevout` when the scan started mid-chain or the
/// data is corrupt.
pub fn input_sum(tx: &Transaction, utxo: &UtxoMap) -> Result<Amount, Error> {
    let mut total = Amount::ZERO;
    for input in &tx.inputs {
        let value = utxo.get(&input.prevout).ok_or(Error::MissingPrevout {
            outpoint: input.prevout,
        })?;
        total = total
            .checked_add(value)
            .expect("input sums stay within 21e14 sat");
    }
    Ok(total)
}

/// Valuation of one transaction produced by the deep scan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TxValuation {
    pub txid: Hash256,
    pub input_sum: Amount,
    pub output_sum: Amount,
    /// input_sum − output_sum for regular transactions; zero for the
    /// coinbase.
    pub fee: Amount,
    pub is_coinbase: bool,
    /// Set when fee < 0, which a valid chain never produces. The record is
    /// kept so scans over adversarial data continue.
    pub negative_fee: bool,
}

/// Process one block against the map: spend each non-coinbase input,
/// compute fees, insert every created output. The coinbase is valued last
/// (its input side is subsidy + the block's total fees) but its outputs
/// enter the map like any other. Valuations come back in block order.
pub fn valuate_block(
    block: &Block,
    height: u64,
    utxo: &mut UtxoMap,
) -> Result<Vec<TxValuation>, Error> {
    let mut valuations: Vec<TxValuation> = Vec::with_capacity(block.txs.len());
    let mut total_fees = Amount::ZERO;
    let mut coinbase_index: Option<usize> = None;

    for (i, tx) in block.txs.iter().enumerate() {
        let is_coinbase = i == 0 && tx.is_coinbase();
        let out_sum = output_sum(tx);

        if is_coinbase {
            // valued after the block's fees are known
            coinbase_index = Some(i);
            valuations.push(TxValuation {
                txid: tx.txid,
                input_sum: Amount::ZERO,
                output_sum: out_sum,
                fee: Amount::ZERO,
                is_coinbase: true,
                negative_fee: false,
            });
        } else {
            let mut in_sum = Amount::ZERO;
            for input in &tx.inputs {
                let value = utxo.spend(&input.prevout)?;
                in_sum = in_sum
                    .checked_add(value)
                    .expect("input sums stay within 21e14 sat");
            }
            let fee = in_sum
                .checked_sub(out_sum)
                .expect("fee arithmetic stays in range");
            let negative_fee = fee.is_negative();
            if !negative_fee {
                total_fees = total_fees.checked_add(fee).expect("fees stay in range");
            }
            valuations.push(TxValuation {
                txid: tx.txid,
                input_sum: in_sum,
                output_sum: out_sum,
                fee,
                is_coinbase: false,
                negative_fee,
            });
        }

        for (vout, output) in tx.outputs.iter().enumerate() {
            utxo.insert(OutPoint::new(tx.txid, vout as u32), output.value);
        }
    }

    if let Some(i) = coinbase_index {
        valuations[i].input_sum = block_subsidy(height)
            .checked_add(total_fees)
            .expect("coinbase claim stays in range");
    }

    Ok(valuations)
}

/// Summary of a completed scan, rendered as JSON on the CLI.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ScanReport {
    pub blocks: u64,
    pub txs: u64,
    pub utxo_peak: usize,
    pub warnings: u64,
}

/// Drive a full forward pass from genesis through `end`, maintaining the
/// map and handing each block's valuations to `visitor`. A deep scan must
/// start at height 0: beginning anywhere else could not value inputs.
pub fn deep_scan<F>(
    source: &dyn ChainSource,
    start: u64,
    end: Option<u64>,
    mut visitor: F,
) -> Result<ScanReport, Error>
where
    F: FnMut(u64, &Block, &[TxValuation]) -> Result<(), Error>,
{
    if start != 0 {
        return Err(Error::DeepScanMidChain { start });
    }
    let end = match end {
        Some(e) => e,
        None => source.best_height()?,
    };

    let mut utxo = UtxoMap::new();
    let mut report = ScanReport::default();

    for item in iterate(source, 0, end)? {
        let (height, block) = item?;
        let valuations =
            valuate_block(&block, height, &mut utxo).map_err(|e| e.at_height(height))?;
        report.blocks += 1;
        report.txs += valuations.len() as u64;
        report.warnings += valuations.iter().filter(|v| v.negative_fee).count() as u64;
        visitor(height, &block, &valuations).map_err(|e| e.at_height(height))?;
    }

    report.utxo_peak = utxo.stats().peak_size;
    Ok(report)
}
