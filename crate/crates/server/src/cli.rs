//! Command-line interface: `serve`, `replay`, `generate`, `bench`,
//! `inspect-index`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use hybridcache::{Engine, EngineConfig};
use hybridcache_harness::replay::format_table;
use hybridcache_harness::trace::{TraceReader, TraceWriter};
use hybridcache_harness::{Policy, ReplayOptions, Replayer, SweepParam, WorkloadSpec};

use crate::bench::{self, BenchOptions, Pattern};
use crate::error::{CliError, Result};
use crate::server::{self, Shared};

const SERVE_ABOUT: &str = "Serve the memcached text protocol (get, set, delete, stats, version, quit).

NOTE: item flags are parsed but NOT stored; every get returns flags 0.
NOTE: exptime is parsed and IGNORED; items never expire.";

#[derive(Debug, Parser)]
#[command(name = "hybridcache", version, about = "DRAM + flash key-value cache with a learned flash admission filter")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    #[command(about = "Serve the memcached text protocol", long_about = SERVE_ABOUT)]
    Serve(ServeArgs),
    /// Replay a trace against a policy and write a metrics report.
    Replay(ReplayArgs),
    /// Generate a synthetic trace from a workload spec.
    Generate(GenerateArgs),
    /// Sequential-key latency benchmark, split by DRAM hit / flash hit / miss.
    Bench(BenchArgs),
    /// Print index and bloom filter footprint.
    InspectIndex(InspectArgs),
}

/// One flag per engine setting; each overrides `--config`.
#[derive(Clone, Debug, Default, Args)]
pub struct EngineArgs {
    /// `key = value` engine configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Bytes, with optional K/M/G suffix.
    #[arg(long, value_name = "SIZE")]
    pub dram_capacity: Option<String>,
    #[arg(long, value_name = "SIZE")]
    pub flash_capacity: Option<String>,
    #[arg(long, value_name = "SIZE")]
    pub segment_size: Option<String>,
    #[arg(long, value_name = "K")]
    pub num_hash_functions: Option<String>,
    #[arg(long, value_name = "BITS")]
    pub clock_bits: Option<String>,
    #[arg(long, value_name = "RATE")]
    pub bloom_fp_rate: Option<String>,
    #[arg(long, value_name = "FRACTION")]
    pub hot_fraction: Option<String>,
    #[arg(long, value_name = "N")]
    pub flashiness_read_threshold: Option<String>,
    /// Bytes per second, or `unlimited`.
    #[arg(long, value_name = "RATE")]
    pub flash_write_budget: Option<String>,
    #[arg(long, value_name = "SECS")]
    pub training_window_secs: Option<String>,
    #[arg(long, value_name = "SECS")]
    pub label_window_secs: Option<String>,
    /// Seconds, or `off`.
    #[arg(long, value_name = "SECS")]
    pub retrain_interval_secs: Option<String>,
    #[arg(long, value_name = "N")]
    pub index_slots: Option<String>,
    #[arg(long, value_name = "SIZE")]
    pub probe_read_size: Option<String>,
    #[arg(long, value_name = "FACTOR")]
    pub flush_pool_factor: Option<String>,
}

impl EngineArgs {
    /// Defaults, then the config file, then flags, then `seed`.
    pub fn build(&self, seed: Option<u64>) -> Result<EngineConfig> {
        let mut cfg = match &self.config {
            Some(path) => EngineConfig::from_file(path)?,
            None => EngineConfig::default(),
        };
        let flags = [
            ("dram_capacity", &self.dram_capacity),
            ("flash_capacity", &self.flash_capacity),
            ("segment_size", &self.segment_size),
            ("num_hash_functions", &self.num_hash_functions),
            ("clock_bits", &self.clock_bits),
            ("bloom_fp_rate", &self.bloom_fp_rate),
            ("hot_fraction", &self.hot_fraction),
            ("flashiness_read_threshold", &self.flashiness_read_threshold),
            ("flash_write_budget", &self.flash_write_budget),
            ("training_window_secs", &self.training_window_secs),
            ("label_window_secs", &self.label_window_secs),
            ("retrain_interval_secs", &self.retrain_interval_secs),
            ("index_slots", &self.index_slots),
            ("probe_read_size", &self.probe_read_size),
            ("flush_pool_factor", &self.flush_pool_factor),
        ];
        for (name, value) in flags {
            if let Some(v) = value {
                cfg.set(name, v)?;
            }
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, default_value = "127.0.0.1:11211")]
    pub listen: SocketAddr,
    /// Back flash with this file instead of memory.
    #[arg(long, value_name = "FILE")]
    pub flash_file: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Logical clock (1 ms per command) instead of wall time.
    #[arg(long)]
    pub deterministic: bool,
    /// Request worker threads (default: available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Milliseconds between cleaner runs.
    #[arg(long, default_value_t = 10)]
    pub cleaner_interval_ms: u64,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long, value_name = "FILE")]
    pub trace: PathBuf,
    #[arg(long, default_value = "flashield")]
    pub policy: Policy,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the JSON report here (a list of rows for sweeps).
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Do not refill misses with a set of the key's last known size.
    #[arg(long)]
    pub no_cache_aside: bool,
    /// Replay once per flashiness threshold, e.g. `1,10,100`.
    #[arg(long, value_delimiter = ',', value_name = "N,..", conflicts_with = "sweep_ratio")]
    pub sweep_threshold: Option<Vec<u32>>,
    /// Replay once per DRAM:flash ratio at constant total memory, e.g. `1:3,1:7`.
    #[arg(long, value_delimiter = ',', value_name = "D:F,..", value_parser = parse_ratio)]
    pub sweep_ratio: Option<Vec<(u64, u64)>>,
}

fn parse_ratio(s: &str) -> std::result::Result<(u64, u64), String> {
    let (d, f) = s.split_once(':').ok_or_else(|| format!("expected D:F, got {s:?}"))?;
    let d: u64 = d.trim().parse().map_err(|_| format!("bad ratio {s:?}"))?;
    let f: u64 = f.trim().parse().map_err(|_| format!("bad ratio {s:?}"))?;
    if d == 0 || f == 0 {
        return Err(format!("ratio parts must be positive: {s:?}"));
    }
    Ok((d, f))
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Workload spec (JSON); omitted fields take their defaults.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Omit the header line.
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, value_name = "FILE")]
    pub flash_file: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "dram")]
    pub pattern: Pattern,
    #[arg(long, default_value_t = 10_000)]
    pub keys: u64,
    /// Measured gets; 0 prints an empty summary.
    #[arg(long, default_value_t = 100_000)]
    pub ops: u64,
    #[arg(long, default_value_t = bench::DEFAULT_VALUE_SIZE)]
    pub value_size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub miss_fraction: f64,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Replay this trace (flashield policy, in-memory flash) before inspecting.
    #[arg(long, value_name = "FILE", conflicts_with = "flash_file")]
    pub trace: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub flash_file: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print JSON instead of `name value` lines.
    #[arg(long)]
    pub json: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve(a) => serve(a),
        Command::Replay(a) => replay(a),
        Command::Generate(a) => generate(a),
        Command::Bench(a) => bench(a),
        Command::InspectIndex(a) => inspect(a),
    }
}

fn open_engine(cfg: EngineConfig, flash_file: Option<&Path>) -> Result<Engine> {
    Ok(match flash_file {
        Some(p) => Engine::with_file(cfg, p)?,
        None => Engine::new(cfg)?,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = a.engine.build(a.seed)?;
    let engine = open_engine(cfg, a.flash_file.as_deref())?;
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    rt.enable_all();
    if let Some(n) = a.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rt.worker_threads(n);
    }
    let rt = rt.build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.listen).await?;
        log::info!("listening on {}", listener.local_addr()?);
        eprintln!("listening on {}", listener.local_addr()?);
        let shared = Shared::new(engine, a.deterministic);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        server::run(listener, shared, Duration::from_millis(a.cleaner_interval_ms.max(1)), shutdown).await
    })?;
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let cfg = a.engine.build(a.seed)?;
    let opts = ReplayOptions {
        cache_aside: !a.no_cache_aside,
    };
    let param = match (a.sweep_threshold, a.sweep_ratio) {
        (Some(ns), _) => Some(SweepParam::FlashinessThreshold(ns)),
        (None, Some(rs)) => Some(SweepParam::DramRatio(rs)),
        (None, None) => None,
    };
    match param {
        None => {
            let report = hybridcache_harness::replay_results(TraceReader::open(&a.trace)?, a.policy, &cfg, opts)?;
            println!(
                "{}: hit_rate {:.4} clwa {:.3} flash_bytes {} client_bytes {}",
                report.policy,
                report.derived.hit_rate,
                report.derived.clwa,
                report.counters.flash_bytes_written,
                report.counters.client_bytes_written
            );
            if let Some(path) = &a.report {
                write_json(path, &report)?;
            }
        }
        Some(param) => {
            let events = hybridcache_harness::trace::read_trace(&a.trace)?;
            let rows = hybridcache_harness::sweep(&events, a.policy, &cfg, &param, opts)?;
            print!("{}", format_table(&rows));
            if let Some(path) = &a.report {
                write_json(path, &rows)?;
            }
        }
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => WorkloadSpec::from_json(&std::fs::read_to_string(p)?)?,
        None => WorkloadSpec::default(),
    };
    let file = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    let mut w = TraceWriter::new(file, !a.no_header)?;
    let mut n = 0u64;
    for ev in hybridcache_harness::generate(&spec, a.seed)? {
        w.write(&ev)?;
        n += 1;
    }
    w.finish()?;
    eprintln!("wrote {n} events to {}", a.out.display());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.miss_fraction) {
        return Err(CliError::Usage("--miss-fraction must be in [0, 1]".into()));
    }
    let cfg = a.engine.build(a.seed)?;
    let mut engine = open_engine(cfg, a.flash_file.as_deref())?;
    let opts = BenchOptions {
        pattern: a.pattern,
        keys: a.keys,
        ops: a.ops,
        value_size: a.value_size,
        miss_fraction: a.miss_fraction,
    };
    let summary = bench::run(&mut engine, &opts)?;
    print!("{summary}");
    if let Some(path) = &a.report {
        write_json(path, &summary)?;
    }
    Ok(())
}

/// Footprint fields as `(name, value)` pairs.
pub fn footprint_lines(engine: &Engine) -> Vec<(&'static str, String)> {
    let fp = engine.index().memory_footprint();
    let cfg = engine.config();
    vec![
        ("index_slots", cfg.index_slot_count().to_string()),
        ("entry_bytes", "4".to_string()),
        ("index_table_bytes", fp.table_bytes.to_string()),
        ("bloom_bytes", fp.bloom_bytes.to_string()),
        ("live_flash_objects", fp.live_objects.to_string()),
        ("ghost_flash_objects", engine.index().ghost_entries().to_string()),
        ("live_segments", engine.index().live_segments().to_string()),
        ("segment_slots", cfg.num_segment_slots().to_string()),
        ("bytes_per_live_object", format!("{:.3}", fp.bytes_per_live_object)),
        ("table_bytes_per_live_object", format!("{:.3}", fp.table_bytes_per_live_object)),
        ("bloom_bits_per_live_object", format!("{:.3}", fp.bloom_bits_per_live_object)),
    ]
}

fn inspect(a: InspectArgs) -> Result<()> {
    let cfg = a.engine.build(a.seed)?;
    let lines = match &a.trace {
        None => footprint_lines(&open_engine(cfg, a.flash_file.as_deref())?),
        Some(trace) => {
            let mut r = Replayer::new(Policy::Flashield, &cfg, ReplayOptions::default())?;
            for ev in TraceReader::open(trace)? {
                r.apply(&ev?)?;
            }
            let now = r.last_timestamp();
            let engine = r.engine_mut().expect("flashield replays the engine");
            engine.drain(now)?;
            footprint_lines(engine)
        }
    };
    if a.json {
        let map: serde_json::Map<String, serde_json::Value> = lines
            .into_iter()
            .map(|(k, v)| {
                let val = v
                    .parse::<u64>()
                    .map(serde_json::Value::from)
                    .or_else(|_| v.parse::<f64>().map(serde_json::Value::from))
                    .unwrap_or(serde_json::Value::String(v));
                (k.to_string(), val)
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&map)?);
    } else {
        for (k, v) in lines {
            println!("{k} {v}");
        }
    }
    Ok(())
}
