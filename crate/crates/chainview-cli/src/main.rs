//! chainview: scan a Bitcoin blockchain, build enriched views into
//! pluggable sinks, and run analytics over them.

mod bench;

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use chainview::analytics;
use chainview::chaingen::{generate, GenSpec};
use chainview::enrich::{ProtocolTable, RateTable};
use chainview::model::{Hash256, Network};
use chainview::navigator::deep_scan;
use chainview::sink::{read_csv, read_jsonl, CsvSink, DocumentSink, RecordSink, SqlSink};
use chainview::source::{iterate, ChainSource, FileSource, MemorySource, RpcSource};
use chainview::views::{
    build_basic, build_fees, build_opreturn, build_rates, build_tags, BasicRecord, FeesRecord,
    OpReturnRecord, RatesRecord, ScanRange, TagsRecord, ViewKind, ViewRecord,
};

const RPC_USER_ENV: &str = "CHAINVIEW_RPC_USER";
const RPC_PASS_ENV: &str = "CHAINVIEW_RPC_PASS";

#[derive(Parser)]
#[command(name = "chainview", version, about = "Bitcoin blockchain views and analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic chain with ground truth
    Gen(GenArgs),
    /// Scan a chain and print a summary report
    Scan(ScanArgs),
    /// Build a view into a sink
    Build(BuildArgs),
    /// Run an analytic over a materialized view file
    Analyze(AnalyzeArgs),
    /// Benchmark view creation, query time, and size per sink
    Bench(bench::BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    blocks: u64,
    /// Block file to write
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON to write
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Tag fixture (address<TAB>tag) to write
    #[arg(long)]
    tags_out: Option<PathBuf>,
    #[arg(long, default_value = "regtest")]
    network: String,
    #[arg(long, default_value_t = 2)]
    txs_min: u32,
    #[arg(long, default_value_t = 6)]
    txs_max: u32,
    #[arg(long, default_value_t = 500)]
    fee_min: i64,
    #[arg(long, default_value_t = 25_000)]
    fee_max: i64,
    #[arg(long, default_value_t = 0.15)]
    opreturn_rate: f64,
    #[arg(long, default_value_t = 0.2)]
    tagged_rate: f64,
    #[arg(long, default_value_t = 0.25)]
    segwit_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    intra_rate: f64,
    #[arg(long)]
    fork_at: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceKind {
    Files,
    Rpc,
    Synthetic,
}

#[derive(Args)]
struct SourceArgs {
    #[arg(long, value_enum, default_value_t = SourceKind::Files)]
    source: SourceKind,
    /// Directory of blk-style files (files source)
    #[arg(long)]
    blocks_dir: Option<PathBuf>,
    /// JSON-RPC endpoint (rpc source); credentials come from
    /// CHAINVIEW_RPC_USER / CHAINVIEW_RPC_PASS
    #[arg(long)]
    rpc_url: Option<String>,
    #[arg(long, default_value = "regtest")]
    network: String,
    /// Genesis hash override for the files source (display-order hex);
    /// defaults to auto-detecting the block with an all-zero prev hash
    #[arg(long)]
    genesis: Option<String>,
    /// Seed for the synthetic source
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Chain length for the synthetic source
    #[arg(long, default_value_t = 100)]
    blocks: u64,
}

impl SourceArgs {
    fn network(&self) -> Result<Network> {
        Ok(self.network.parse::<Network>()?)
    }

    fn open(&self) -> Result<Box<dyn ChainSource>> {
        let network = self.network()?;
        match self.source {
            SourceKind::Files => {
                let dir = self
                    .blocks_dir
                    .as_ref()
                    .context("--blocks-dir is required with --source files")?;
                let genesis = match &self.genesis {
                    Some(hex) => Some(Hash256::from_hex(hex)?),
                    None => None,
                };
                Ok(Box::new(FileSource::open_dir(dir, genesis, network.magic())?))
            }
            SourceKind::Rpc => {
                let url = self
                    .rpc_url
                    .as_ref()
                    .context("--rpc-url is required with --source rpc")?;
                let user = std::env::var(RPC_USER_ENV)
                    .with_context(|| format!("{RPC_USER_ENV} not set"))?;
                let pass = std::env::var(RPC_PASS_ENV)
                    .with_context(|| format!("{RPC_PASS_ENV} not set"))?;
                Ok(Box::new(RpcSource::new(url, &user, &pass)))
            }
            SourceKind::Synthetic => {
                let generated = generate(&GenSpec {
                    seed: self.seed,
                    blocks: self.blocks,
                    network,
                    ..GenSpec::default()
                })?;
                Ok(Box::new(MemorySource::new(generated.main_chain_blocks()?)))
            }
        }
    }
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    start: Option<u64>,
    #[arg(long)]
    end: Option<u64>,
    /// Maintain the outpoint-value map and compute fees (requires start 0)
    #[arg(long)]
    deep: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SinkKind {
    Jsonl,
    Csv,
    Sql,
}

#[derive(Args)]
struct BuildArgs {
    /// View to build
    view: String,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, value_enum, default_value_t = SinkKind::Jsonl)]
    sink: SinkKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    start: Option<u64>,
    #[arg(long)]
    end: Option<u64>,
    /// Exchange-rate CSV (date,rate); required for rates and fees views
    #[arg(long)]
    rates: Option<PathBuf>,
    /// Fetch rates over HTTP instead, caching to --rates-cache
    /// (defaults to the CHAINVIEW_RATES_URL environment variable)
    #[arg(long)]
    rates_url: Option<String>,
    #[arg(long)]
    rates_cache: Option<PathBuf>,
    /// Tag file (address<TAB>tag); required for the tags view
    #[arg(long)]
    tags: Option<PathBuf>,
    /// Protocol rules CSV (hex_prefix,name); defaults to the built-in table
    #[arg(long)]
    protocols: Option<PathBuf>,
}

impl BuildArgs {
    fn rate_table(&self) -> Result<RateTable> {
        if let Some(path) = &self.rates {
            return Ok(RateTable::from_csv(path)?);
        }
        let url = match &self.rates_url {
            Some(url) => Some(url.clone()),
            None => std::env::var(chainview::enrich::RATES_URL_ENV).ok(),
        };
        if let Some(url) = url {
            let cache = self
                .rates_cache
                .clone()
                .unwrap_or_else(|| PathBuf::from("rates-cache.csv"));
            return Ok(RateTable::with_http(url, cache)?);
        }
        bail!("this view needs exchange rates: pass --rates FILE or --rates-url URL");
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// One of: avg-io, protocols, rate-buckets, whales, tag-daily
    analytic: String,
    /// Materialized view file (.jsonl from the document sink, or .csv)
    #[arg(long = "in", value_name = "PATH")]
    in_path: PathBuf,
    /// Output format
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    /// Write here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// protocols: keep only protocols with strictly more records than this
    #[arg(long, default_value_t = 1000)]
    min_count: u64,
    /// rate-buckets: bucket width in USD
    #[arg(long, default_value_t = 300.0)]
    bucket_width: f64,
    /// rate-buckets: number of buckets
    #[arg(long, default_value_t = 7)]
    buckets: usize,
    /// tag-daily: tag prefix to match
    #[arg(long, default_value = "SatoshiDICE")]
    prefix: String,
    /// whales: drop the first record of each block (the coinbase row, in
    /// scan-ordered files)
    #[arg(long)]
    exclude_coinbase: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Csv,
    Jsonl,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => run_gen(args),
        Command::Scan(args) => run_scan(args),
        Command::Build(args) => run_build(args),
        Command::Analyze(args) => run_analyze(args),
        Command::Bench(args) => bench::run(args),
    };
    if let Err(e) = result {
        // a closed stdout pipe (e.g. | head) is not an error worth reporting
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::BrokenPipe {
                return;
            }
        }
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run_gen(args: GenArgs) -> Result<()> {
    let spec = GenSpec {
        seed: args.seed,
        blocks: args.blocks,
        txs_per_block: (args.txs_min, args.txs_max),
        fee_range: (args.fee_min, args.fee_max),
        opreturn_rate: args.opreturn_rate,
        tagged_payment_rate: args.tagged_rate,
        segwit_rate: args.segwit_rate,
        intra_block_spend_rate: args.intra_rate,
        fork_at: args.fork_at,
        network: args.network.parse()?,
        ..GenSpec::default()
    };
    let generated = generate(&spec)?;
    std::fs::write(&args.out, &generated.file_bytes)
        .with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(truth_path) = &args.truth {
        let json = serde_json::to_string_pretty(&generated.truth)?;
        std::fs::write(truth_path, json)?;
    }
    if let Some(tags_path) = &args.tags_out {
        std::fs::write(tags_path, generated.truth.tags_tsv())?;
    }
    eprintln!(
        "generated {} blocks, {} txs, {} bytes -> {}",
        generated.truth.blocks,
        generated.truth.total_txs,
        generated.file_bytes.len(),
        args.out.display()
    );
    Ok(())
}

fn run_scan(args: ScanArgs) -> Result<()> {
    let source = args.source.open()?;
    let report = if args.deep {
        deep_scan(source.as_ref(), args.start.unwrap_or(0), args.end, |_, _, _| Ok(()))?
    } else {
        let best = source.best_height()?;
        let start = args.start.unwrap_or(0);
        let end = args.end.unwrap_or(best);
        let mut report = chainview::navigator::ScanReport::default();
        for item in iterate(source.as_ref(), start, end)? {
            let (_, block) = item?;
            report.blocks += 1;
            report.txs += block.txs.len() as u64;
        }
        report
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn make_sink(kind: SinkKind, out: &PathBuf) -> Result<Box<dyn RecordSink>> {
    Ok(match kind {
        SinkKind::Jsonl => Box::new(DocumentSink::create(out)?),
        SinkKind::Csv => Box::new(CsvSink::create(out)?),
        SinkKind::Sql => Box::new(SqlSink::create(out)?),
    })
}

fn run_build(args: BuildArgs) -> Result<()> {
    let view: ViewKind = args.view.parse()?;
    let source = args.source.open()?;
    let mut sink = make_sink(args.sink, &args.out)?;
    let range = ScanRange::new(args.start, args.end);

    let report = match view {
        ViewKind::Basic => build_basic(source.as_ref(), range, sink.as_mut())?,
        ViewKind::OpReturn => {
            let table = match &args.protocols {
                Some(path) => ProtocolTable::from_csv(path)?,
                None => ProtocolTable::default_table(),
            };
            build_opreturn(source.as_ref(), range, &table, sink.as_mut())?
        }
        ViewKind::Rates => {
            let mut rates = args.rate_table()?;
            build_rates(source.as_ref(), range, &mut rates, sink.as_mut())?
        }
        ViewKind::Fees => {
            if args.start.unwrap_or(0) != 0 {
                bail!("the fees view is a deep scan and must start at height 0");
            }
            let mut rates = args.rate_table()?;
            build_fees(source.as_ref(), args.end, &mut rates, sink.as_mut())?
        }
        ViewKind::Tags => {
            let tags_path = args
                .tags
                .as_ref()
                .context("--tags FILE is required for the tags view")?;
            let tags = chainview::enrich::load_tags(tags_path)?;
            for warning in &tags.warnings {
                eprintln!("tags: {warning}");
            }
            build_tags(
                source.as_ref(),
                range,
                &tags,
                args.source.network()?,
                sink.as_mut(),
            )?
        }
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn out_writer(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(path) => Box::new(std::fs::File::create(path)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn read_view_records(path: &PathBuf, kind: ViewKind) -> Result<Vec<ViewRecord>> {
    let is_csv = path.extension().and_then(|e| e.to_str()) == Some("csv");
    Ok(if is_csv {
        read_csv(path, kind)?
    } else {
        read_jsonl(path, kind)?
    })
}

fn run_analyze(args: AnalyzeArgs) -> Result<()> {
    let mut out = out_writer(&args.out)?;
    match args.analytic.as_str() {
        "avg-io" => {
            let records: Vec<BasicRecord> = read_view_records(&args.in_path, ViewKind::Basic)?
                .into_iter()
                .map(|r| match r {
                    ViewRecord::Basic(b) => b,
                    _ => unreachable!(),
                })
                .collect();
            let rows = analytics::avg_io_by_date(&records);
            match args.format {
                OutFormat::Csv => {
                    writeln!(out, "date,avg_in,avg_out")?;
                    for row in rows {
                        writeln!(
                            out,
                            "{},{},{}",
                            row.date,
                            row.avg_inputs_6dp(),
                            row.avg_outputs_6dp()
                        )?;
                    }
                }
                OutFormat::Jsonl => {
                    for row in rows {
                        writeln!(out, "{}", serde_json::to_string(&row)?)?;
                    }
                }
            }
        }
        "protocols" => {
            let records: Vec<OpReturnRecord> =
                read_view_records(&args.in_path, ViewKind::OpReturn)?
                    .into_iter()
                    .map(|r| match r {
                        ViewRecord::OpReturn(o) => o,
                        _ => unreachable!(),
                    })
                    .collect();
            let rows = analytics::protocol_counts(&records, args.min_count);
            match args.format {
                OutFormat::Csv => {
                    writeln!(out, "protocol,count")?;
                    for (protocol, count) in rows {
                        writeln!(out, "{protocol},{count}")?;
                    }
                }
                OutFormat::Jsonl => {
                    for (protocol, count) in rows {
                        writeln!(
                            out,
                            "{}",
                            serde_json::json!({ "protocol": protocol, "count": count })
                        )?;
                    }
                }
            }
        }
        "rate-buckets" => {
            let records: Vec<RatesRecord> = read_view_records(&args.in_path, ViewKind::Rates)?
                .into_iter()
                .map(|r| match r {
                    ViewRecord::Rates(x) => x,
                    _ => unreachable!(),
                })
                .collect();
            let summary =
                analytics::avg_output_by_rate_bucket(&records, args.bucket_width, args.buckets);
            for warning in &summary.warnings {
                eprintln!("rate-buckets: {warning}");
            }
            let all = summary.buckets.iter().chain(summary.overflow.iter());
            match args.format {
                OutFormat::Csv => {
                    writeln!(out, "bucket,avg_output_btc")?;
                    for bucket in all {
                        writeln!(out, "{},{}", bucket.label, bucket.avg_output_btc())?;
                    }
                }
                OutFormat::Jsonl => {
                    for bucket in all {
                        writeln!(out, "{}", serde_json::to_string(bucket)?)?;
                    }
                }
            }
        }
        "whales" => {
            let mut records: Vec<FeesRecord> =
                read_view_records(&args.in_path, ViewKind::Fees)?
                    .into_iter()
                    .map(|r| match r {
                        ViewRecord::Fees(f) => f,
                        _ => unreachable!(),
                    })
                    .collect();
            if args.exclude_coinbase {
                // the document sink writes blocks in scan order with the
                // coinbase row first, so drop each block's first record
                let mut seen = std::collections::HashSet::new();
                records.retain(|r| !seen.insert(r.block_hash.clone()));
            }
            let report = analytics::whale_transactions(&records)?;
            eprintln!(
                "mean {:.6} USD, sigma {:.6} USD, threshold {:.6} USD, whales {}",
                report.mean_usd,
                report.sigma_usd,
                report.threshold_usd,
                report.whales.len()
            );
            match args.format {
                OutFormat::Csv => {
                    writeln!(out, "blockHash,txHash,fee,date,rate,feeUsd")?;
                    for whale in &report.whales {
                        writeln!(
                            out,
                            "{},{},{},{},{},{}",
                            whale.block_hash,
                            whale.tx_hash,
                            whale.fee,
                            whale.date,
                            whale.rate,
                            analytics::fee_usd(whale)
                        )?;
                    }
                }
                OutFormat::Jsonl => {
                    writeln!(
                        out,
                        "{}",
                        serde_json::json!({
                            "meanUsd": report.mean_usd,
                            "sigmaUsd": report.sigma_usd,
                            "thresholdUsd": report.threshold_usd,
                            "whales": report.whales.len(),
                        })
                    )?;
                    for whale in &report.whales {
                        writeln!(out, "{}", serde_json::to_string(whale)?)?;
                    }
                }
            }
        }
        "tag-daily" => {
            let records: Vec<TagsRecord> = read_view_records(&args.in_path, ViewKind::Tags)?
                .into_iter()
                .map(|r| match r {
                    ViewRecord::Tags(t) => t,
                    _ => unreachable!(),
                })
                .collect();
            let rows = analytics::daily_tx_to_tag_prefix(&records, &args.prefix);
            match args.format {
                OutFormat::Csv => {
                    writeln!(out, "date,txs")?;
                    for (date, txs) in rows {
                        writeln!(out, "{date},{txs}")?;
                    }
                }
                OutFormat::Jsonl => {
                    for (date, txs) in rows {
                        writeln!(out, "{}", serde_json::json!({ "date": date, "txs": txs }))?;
                    }
                }
            }
        }
        other => bail!("unknown analytic {other:?}; expected avg-io, protocols, rate-buckets, whales, or tag-daily"),
    }
    Ok(())
}
