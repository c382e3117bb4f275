//! Report-only benchmark: build every view into every applicable sink over
//! a synthetic chain, then time a representative query per sink, mirroring
//! a create / query / size comparison.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;

use chainview::analytics;
use chainview::chaingen::{generate, GenSpec, Generated};
use chainview::enrich::{ProtocolTable, RateTable, TagMap};
use chainview::model::Network;
use chainview::sink::{read_csv, read_jsonl, CsvSink, DocumentSink, RecordSink, SqlSink};
use chainview::source::MemorySource;
use chainview::views::{
    build_basic, build_fees, build_opreturn, build_rates, build_tags, ScanRange, ViewKind,
    ViewRecord,
};

#[derive(Args)]
pub struct BenchArgs {
    /// Synthetic chain length
    #[arg(long, default_value_t = 10_000)]
    blocks: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Where to write the view files (defaults to a temp directory)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Emit one JSON array instead of the text table
    #[arg(long)]
    json: bool,
}

#[derive(serde::Serialize)]
struct BenchRow {
    view: &'static str,
    sink: &'static str,
    create_secs: f64,
    query_secs: f64,
    size_bytes: u64,
    records: u64,
}

pub fn run(args: BenchArgs) -> Result<()> {
    let out_dir = match &args.out_dir {
        Some(dir) => dir.clone(),
        None => {
            let dir = std::env::temp_dir().join(format!("chainview-bench-{}", std::process::id()));
            std::fs::create_dir_all(&dir)?;
            dir
        }
    };
    std::fs::create_dir_all(&out_dir)?;

    eprintln!("generating {}-block chain (seed {})...", args.blocks, args.seed);
    let generated = generate(&GenSpec {
        seed: args.seed,
        blocks: args.blocks,
        ..GenSpec::default()
    })?;
    let source = generated.memory_source()?;
    let protocol_table = ProtocolTable::default_table();
    let tags = TagMap::from_entries(
        generated
            .truth
            .tag_pool
            .iter()
            .map(|e| (e.address.clone(), e.tag.clone())),
    );

    let mut rows: Vec<BenchRow> = Vec::new();
    for view in ViewKind::ALL {
        let name = view.schema().view;
        for sink_kind in ["jsonl", "csv", "sql"] {
            if sink_kind == "csv" && view == ViewKind::Basic {
                continue; // nested lists are not CSV-representable
            }
            let path = out_dir.join(format!("{name}.{sink_kind}"));

            let started = Instant::now();
            let records = build_into(
                view,
                sink_kind,
                &path,
                &source,
                &generated,
                &protocol_table,
                &tags,
            )?;
            let create_secs = started.elapsed().as_secs_f64();
            let size_bytes = std::fs::metadata(&path)?.len();

            let started = Instant::now();
            query(view, sink_kind, &path)?;
            let query_secs = started.elapsed().as_secs_f64();

            rows.push(BenchRow {
                view: name,
                sink: sink_kind,
                create_secs,
                query_secs,
                size_bytes,
                records,
            });
        }
    }

    if args.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        println!(
            "{:<12} {:<6} {:>10} {:>10} {:>12} {:>9}",
            "view", "sink", "create_s", "query_s", "size_bytes", "records"
        );
        for row in &rows {
            println!(
                "{:<12} {:<6} {:>10.3} {:>10.3} {:>12} {:>9}",
                row.view, row.sink, row.create_secs, row.query_secs, row.size_bytes, row.records
            );
        }
    }
    Ok(())
}

fn rate_table(generated: &Generated) -> RateTable {
    RateTable::from_entries(generated.truth.daily.iter().enumerate().map(|(i, day)| {
        let date: chrono::NaiveDate = day.date.parse().expect("truth dates parse");
        (date, 100.0 + (i as f64 * 313.0) % 2_000.0)
    }))
}

fn build_into(
    view: ViewKind,
    sink_kind: &str,
    path: &PathBuf,
    source: &MemorySource,
    generated: &Generated,
    protocols: &ProtocolTable,
    tags: &TagMap,
) -> Result<u64> {
    let mut sink: Box<dyn RecordSink> = match sink_kind {
        "jsonl" => Box::new(DocumentSink::create(path)?),
        "csv" => Box::new(CsvSink::create(path)?),
        "sql" => Box::new(SqlSink::create(path)?),
        other => anyhow::bail!("unknown sink {other}"),
    };
    let range = ScanRange::default();
    let report = match view {
        ViewKind::Basic => build_basic(source, range, sink.as_mut())?,
        ViewKind::OpReturn => build_opreturn(
            source,
            ScanRange::new(Some(0), None),
            protocols,
            sink.as_mut(),
        )?,
        ViewKind::Rates => {
            let mut rates = rate_table(generated);
            build_rates(source, range, &mut rates, sink.as_mut())?
        }
        ViewKind::Fees => {
            let mut rates = rate_table(generated);
            build_fees(source, None, &mut rates, sink.as_mut())?
        }
        ViewKind::Tags => build_tags(source, range, tags, Network::Regtest, sink.as_mut())?,
    };
    Ok(report.records)
}

/// From the on-disk artifact to an analytic result: parse + aggregate for
/// file formats, load + SQL aggregation for the sql sink.
fn query(view: ViewKind, sink_kind: &str, path: &PathBuf) -> Result<()> {
    if sink_kind == "sql" {
        return query_sql(view, path);
    }
    let records = if sink_kind == "csv" {
        read_csv(path, view)?
    } else {
        read_jsonl(path, view)?
    };
    match view {
        ViewKind::Basic => {
            let basic: Vec<_> = records
                .into_iter()
                .map(|r| match r {
                    ViewRecord::Basic(b) => b,
                    _ => unreachable!(),
                })
                .collect();
            let _ = analytics::avg_io_by_date(&basic);
        }
        ViewKind::OpReturn => {
            let op: Vec<_> = records
                .into_iter()
                .map(|r| match r {
                    ViewRecord::OpReturn(o) => o,
                    _ => unreachable!(),
                })
                .collect();
            let _ = analytics::protocol_counts(&op, 1000);
        }
        ViewKind::Rates => {
            let rates: Vec<_> = records
                .into_iter()
                .map(|r| match r {
                    ViewRecord::Rates(x) => x,
                    _ => unreachable!(),
                })
                .collect();
            let _ = analytics::avg_output_by_rate_bucket(&rates, 300.0, 7);
        }
        ViewKind::Fees => {
            let fees: Vec<_> = records
                .into_iter()
                .map(|r| match r {
                    ViewRecord::Fees(f) => f,
                    _ => unreachable!(),
                })
                .collect();
            let _ = analytics::whale_transactions(&fees)?;
        }
        ViewKind::Tags => {
            let tags: Vec<_> = records
                .into_iter()
                .map(|r| match r {
                    ViewRecord::Tags(t) => t,
                    _ => unreachable!(),
                })
                .collect();
            let _ = analytics::daily_tx_to_tag_prefix(&tags, "SatoshiDICE");
        }
    }
    Ok(())
}

fn query_sql(view: ViewKind, path: &PathBuf) -> Result<()> {
    let script = std::fs::read_to_string(path)?;
    let conn = rusqlite::Connection::open_in_memory()?;
    conn.execute_batch(&script)
        .context("loading sql sink output")?;
    match view {
        ViewKind::Basic => {
            let mut stmt = conn.prepare(
                "SELECT date, AVG(json_array_length(inputs)), AVG(json_array_length(outputs)) \
                 FROM basic GROUP BY date ORDER BY date",
            )?;
            let rows: Vec<(String, f64, f64)> = stmt
                .query_map([], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))?
                .collect::<Result<_, _>>()?;
            anyhow::ensure!(!rows.is_empty());
        }
        ViewKind::OpReturn => {
            let mut stmt = conn.prepare(
                "SELECT protocol, COUNT(*) AS n FROM opreturn \
                 GROUP BY protocol HAVING n > 1000 ORDER BY n DESC",
            )?;
            let _rows: Vec<(String, u64)> = stmt
                .query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?
                .collect::<Result<_, _>>()?;
        }
        ViewKind::Rates => {
            let mut stmt = conn.prepare(
                "SELECT CAST(rate / 300 AS INTEGER) AS bucket, AVG(outputSum / 1e8) \
                 FROM rates GROUP BY bucket ORDER BY bucket",
            )?;
            let rows: Vec<(i64, f64)> = stmt
                .query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?
                .collect::<Result<_, _>>()?;
            anyhow::ensure!(!rows.is_empty());
        }
        ViewKind::Fees => {
            let mean: f64 =
                conn.query_row("SELECT AVG(fee / 1e8 * rate) FROM fees", [], |r| r.get(0))?;
            let variance: f64 = conn.query_row(
                "SELECT AVG((fee / 1e8 * rate - ?1) * (fee / 1e8 * rate - ?1)) FROM fees",
                [mean],
                |r| r.get(0),
            )?;
            let threshold = mean + 2.0 * variance.sqrt();
            let _whales: u64 = conn.query_row(
                "SELECT COUNT(*) FROM fees WHERE fee / 1e8 * rate > ?1",
                [threshold],
                |r| r.get(0),
            )?;
        }
        ViewKind::Tags => {
            let mut stmt = conn.prepare(
                "SELECT date, COUNT(DISTINCT txHash) FROM tagsoutputs \
                 GROUP BY date ORDER BY date",
            )?;
            let _rows: Vec<(String, u64)> = stmt
                .query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?
                .collect::<Result<_, _>>()?;
        }
    }
    Ok(())
}
