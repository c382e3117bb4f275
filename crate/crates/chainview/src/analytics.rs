//! The five analyses, implemented as pure aggregations over view records.
//!
//! Every analytic is a deterministic function of its record multiset:
//! integer accumulation throughout (floating conversion only at render
//! time), and float reductions sort their inputs first so record order can
//! never change a result.

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::Error;
use crate::model::SATS_PER_BTC;
use crate::views::{BasicRecord, FeesRecord, OpReturnRecord, RatesRecord, TagsRecord};

/// Render `numer / denom` with exactly six decimals, rounding half up.
pub fn format_ratio_6dp(numer: u128, denom: u128) -> String {
    assert!(denom > 0, "ratio denominator must be positive");
    let scaled = (numer * 1_000_000 + denom / 2) / denom;
    format!("{}.{:06}", scaled / 1_000_000, scaled % 1_000_000)
}

/// Per-date input/output averages over basic records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AvgIoRow {
    pub date: NaiveDate,
    pub tx_count: u64,
    pub input_sum: u64,
    pub output_sum: u64,
}

impl AvgIoRow {
    pub fn avg_inputs(&self) -> f64 {
        self.input_sum as f64 / self.tx_count as f64
    }

    pub fn avg_outputs(&self) -> f64 {
        self.output_sum as f64 / self.tx_count as f64
    }

    pub fn avg_inputs_6dp(&self) -> String {
        format_ratio_6dp(self.input_sum as u128, self.tx_count as u128)
    }

    pub fn avg_outputs_6dp(&self) -> String {
        format_ratio_6dp(self.output_sum as u128, self.tx_count as u128)
    }
}

/// Group basic records by date and average the number of inputs and
/// outputs per transaction, ascending by date.
pub fn avg_io_by_date(records: &[BasicRecord]) -> Vec<AvgIoRow> {
    let mut by_date: BTreeMap<NaiveDate, (u64, u64, u64)> = BTreeMap::new();
    for record in records {
        let entry = by_date.entry(record.date).or_default();
        entry.0 += 1;
        entry.1 += record.inputs.len() as u64;
        entry.2 += record.outputs.len() as u64;
    }
    by_date
        .into_iter()
        .map(|(date, (tx_count, input_sum, output_sum))| AvgIoRow {
            date,
            tx_count,
            input_sum,
            output_sum,
        })
        .collect()
}

/// Records per protocol, keeping only protocols with strictly more than
/// `min_count` records, descending by count (ties by name).
pub fn protocol_counts(records: &[OpReturnRecord], min_count: u64) -> Vec<(String, u64)> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for record in records {
        *counts.entry(&record.protocol).or_default() += 1;
    }
    let mut out: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, count)| *count > min_count)
        .map(|(name, count)| (name.to_string(), count))
        .collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// One exchange-rate interval with the accumulated output values that
/// landed in it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateBucket {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub tx_count: u64,
    pub output_sum_sat: u128,
}

impl RateBucket {
    /// Mean per-transaction output value in BTC; 0 for an empty bucket.
    pub fn avg_output_btc(&self) -> f64 {
        if self.tx_count == 0 {
            return 0.0;
        }
        (self.output_sum_sat as f64 / self.tx_count as f64) / SATS_PER_BTC as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BucketSummary {
    pub buckets: Vec<RateBucket>,
    /// Records whose rate fell at or above the last bucket's upper bound.
    pub overflow: Option<RateBucket>,
    pub warnings: Vec<String>,
}

fn bucket_bound(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Average output value (BTC) of transactions grouped into `n_buckets`
/// half-open exchange-rate intervals of `bucket_width` USD each. Rates at
/// or above the top edge go to an overflow bucket with a warning.
pub fn avg_output_by_rate_bucket(
    records: &[RatesRecord],
    bucket_width: f64,
    n_buckets: usize,
) -> BucketSummary {
    assert!(bucket_width > 0.0 && n_buckets > 0);
    let mut buckets: Vec<RateBucket> = (0..n_buckets)
        .map(|k| {
            let lo = k as f64 * bucket_width;
            let hi = (k + 1) as f64 * bucket_width;
            RateBucket {
                label: format!("{}-{}", bucket_bound(lo), bucket_bound(hi)),
                lo,
                hi,
                tx_count: 0,
                output_sum_sat: 0,
            }
        })
        .collect();
    let top = n_buckets as f64 * bucket_width;
    let mut overflow = RateBucket {
        label: format!("{}+", bucket_bound(top)),
        lo: top,
        hi: f64::INFINITY,
        tx_count: 0,
        output_sum_sat: 0,
    };

    for record in records {
        let index = (record.rate / bucket_width).floor() as i64;
        let bucket = if index >= 0 && (index as usize) < n_buckets {
            &mut buckets[index as usize]
        } else {
            &mut overflow
        };
        bucket.tx_count += 1;
        bucket.output_sum_sat += record.output_sum.max(0) as u128;
    }

    let mut warnings = Vec::new();
    let overflow = if overflow.tx_count > 0 {
        warnings.push(format!(
            "{} records with rate >= {} fell outside the {} buckets",
            overflow.tx_count, top, n_buckets
        ));
        Some(overflow)
    } else {
        None
    };
    BucketSummary {
        buckets,
        overflow,
        warnings,
    }
}

pub fn fee_usd(record: &FeesRecord) -> f64 {
    record.fee as f64 / SATS_PER_BTC as f64 * record.rate
}

#[derive(Debug, Clone, Serialize)]
pub struct WhaleReport {
    pub mean_usd: f64,
    pub sigma_usd: f64,
    pub threshold_usd: f64,
    pub whales: Vec<FeesRecord>,
}

/// Whale transactions: those paying a USD fee strictly greater than
/// mean + 2σ over all records. σ is the population standard deviation.
/// Whales come back sorted by descending fee.
pub fn whale_transactions(records: &[FeesRecord]) -> Result<WhaleReport, Error> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    // sorting before summing makes the float reduction independent of
    // record order
    let mut fees: Vec<f64> = records.iter().map(fee_usd).collect();
    fees.sort_by(f64::total_cmp);

    let n = fees.len() as f64;
    let mean = fees.iter().sum::<f64>() / n;
    let variance = fees.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sigma = variance.sqrt();
    let threshold = mean + 2.0 * sigma;

    let mut whales: Vec<FeesRecord> = records
        .iter()
        .filter(|r| fee_usd(r) > threshold)
        .cloned()
        .collect();
    whales.sort_by(|a, b| {
        fee_usd(b)
            .total_cmp(&fee_usd(a))
            .then_with(|| a.tx_hash.cmp(&b.tx_hash))
    });

    Ok(WhaleReport {
        mean_usd: mean,
        sigma_usd: sigma,
        threshold_usd: threshold,
        whales,
    })
}

/// Distinct transactions per date paying any address whose tag starts with
/// `prefix` (case-sensitive), ascending by date. A transaction counts once
/// per date no matter how many of its outputs match.
pub fn daily_tx_to_tag_prefix(records: &[TagsRecord], prefix: &str) -> Vec<(NaiveDate, u64)> {
    let mut by_date: BTreeMap<NaiveDate, HashSet<&str>> = BTreeMap::new();
    for record in records {
        if record.tag.starts_with(prefix) {
            by_date
                .entry(record.date)
                .or_default()
                .insert(&record.tx_hash);
        }
    }
    by_date
        .into_iter()
        .map(|(date, txs)| (date, txs.len() as u64))
        .collect()
}
