//! In-process microbenchmark over sequential keys. Numbers are informational;
//! they depend entirely on the machine and the flash device.

use std::fmt;
use std::time::Instant;

use hybridcache::metrics::MetricsReport;
use hybridcache::{Engine, HitKind, Key, Timestamp};
use serde::Serialize;

use crate::error::Result;

/// Mean object size of the calibrated workload.
pub const DEFAULT_VALUE_SIZE: usize = 257;

const TENANT: &str = "bench";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Pattern {
    /// Load, then read back from DRAM.
    Dram,
    /// Load, read once, push everything flash-worthy to flash, then read.
    Flash,
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub pattern: Pattern,
    pub keys: u64,
    /// Measured gets.
    pub ops: u64,
    pub value_size: usize,
    /// Fraction of measured gets aimed at keys that were never set.
    pub miss_fraction: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            pattern: Pattern::Dram,
            keys: 10_000,
            ops: 100_000,
            value_size: DEFAULT_VALUE_SIZE,
            miss_fraction: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LatencySummary {
    pub count: u64,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl LatencySummary {
    /// Nearest-rank percentiles over `nanos` (sorted in place).
    pub fn from_nanos(nanos: &mut [u64]) -> Self {
        if nanos.is_empty() {
            return LatencySummary::default();
        }
        nanos.sort_unstable();
        let n = nanos.len();
        let rank = |p: f64| {
            let r = ((p * n as f64).ceil() as usize).clamp(1, n);
            nanos[r - 1] as f64 / 1e3
        };
        LatencySummary {
            count: n as u64,
            mean_us: nanos.iter().map(|&x| x as f64).sum::<f64>() / n as f64 / 1e3,
            p50_us: rank(0.50),
            p90_us: rank(0.90),
            p99_us: rank(0.99),
            max_us: nanos[n - 1] as f64 / 1e3,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchSummary {
    pub ops: u64,
    pub elapsed_secs: f64,
    pub ops_per_sec: f64,
    pub dram_hit: LatencySummary,
    pub flash_hit: LatencySummary,
    pub miss: LatencySummary,
    pub report: Option<MetricsReport>,
}

impl fmt::Display for BenchSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} gets in {:.3} s ({:.0} ops/s)",
            self.ops, self.elapsed_secs, self.ops_per_sec
        )?;
        writeln!(
            f,
            "{:<10} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "kind", "count", "mean_us", "p50_us", "p90_us", "p99_us", "max_us"
        )?;
        for (name, l) in [("dram_hit", &self.dram_hit), ("flash_hit", &self.flash_hit), ("miss", &self.miss)] {
            writeln!(
                f,
                "{:<10} {:>9} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>9.2}",
                name, l.count, l.mean_us, l.p50_us, l.p90_us, l.p99_us, l.max_us
            )?;
        }
        Ok(())
    }
}

fn key(i: u64) -> Key {
    Key::new(format!("{TENANT}:k{i:012}")).expect("short key")
}

fn absent_key(i: u64) -> Key {
    Key::new(format!("{TENANT}:miss{i:012}")).expect("short key")
}

/// Run the benchmark on `engine`. Trace time advances one millisecond per
/// operation so the run does not depend on wall-clock pacing.
pub fn run(engine: &mut Engine, opts: &BenchOptions) -> Result<BenchSummary> {
    if opts.ops == 0 {
        return Ok(BenchSummary {
            ops: 0,
            elapsed_secs: 0.0,
            ops_per_sec: 0.0,
            dram_hit: LatencySummary::default(),
            flash_hit: LatencySummary::default(),
            miss: LatencySummary::default(),
            report: None,
        });
    }
    let mut tick = 0u64;
    let mut now = || {
        tick += 1;
        Timestamp(tick * 1000)
    };
    let value = vec![b'x'; opts.value_size];
    for i in 0..opts.keys {
        engine.set(TENANT, key(i), value.clone(), now())?;
    }
    if opts.pattern == Pattern::Flash {
        for i in 0..opts.keys {
            engine.get(TENANT, &key(i), now())?;
        }
        engine.drain(now())?;
    }

    let miss_every = if opts.miss_fraction > 0.0 {
        (1.0 / opts.miss_fraction.min(1.0)).round().max(1.0) as u64
    } else {
        u64::MAX
    };
    let mut lat: [Vec<u64>; 3] = Default::default();
    let start = Instant::now();
    for op in 0..opts.ops {
        let k = if (op + 1) % miss_every == 0 || opts.keys == 0 {
            absent_key(op)
        } else {
            key(op % opts.keys)
        };
        let t = now();
        let began = Instant::now();
        let g = engine.get(TENANT, &k, t)?;
        let ns = began.elapsed().as_nanos() as u64;
        let slot = match g.kind {
            HitKind::Dram => 0,
            HitKind::Flash => 1,
            HitKind::Miss => 2,
        };
        lat[slot].push(ns);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let [mut d, mut fl, mut m] = lat;
    Ok(BenchSummary {
        ops: opts.ops,
        elapsed_secs: elapsed,
        ops_per_sec: if elapsed > 0.0 { opts.ops as f64 / elapsed } else { 0.0 },
        dram_hit: LatencySummary::from_nanos(&mut d),
        flash_hit: LatencySummary::from_nanos(&mut fl),
        miss: LatencySummary::from_nanos(&mut m),
        report: Some(engine.report("flashield")),
    })
}
