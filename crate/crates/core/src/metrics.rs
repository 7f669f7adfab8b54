//! Counters and the report emitted by replays, the server and benchmarks.
//!
//! Ownership: request counters (`gets`, hits, `misses`, `sets`, `deletes`,
//! `client_bytes_written`, `flash_reads`) belong to the engine request path;
//! flush, reclaim, ghost, eviction and budget counters belong to the
//! cleaner; footprint gauges are filled in from the index at snapshot time.
//!
//! CLWA is `flash_bytes_written / client_bytes_written` where client bytes
//! are serialized record sizes (header + key + value), not value bytes.

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

macro_rules! counter_set {
    ($($(#[$m:meta])* $name:ident),* $(,)?) => {
        #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
        pub struct CounterSet {
            $($(#[$m])* pub $name: u64,)*
        }

        impl CounterSet {
            /// `(name, value)` pairs in declaration order.
            pub fn pairs(&self) -> Vec<(&'static str, u64)> {
                vec![$((stringify!($name), self.$name)),*]
            }
        }
    };
}

counter_set! {
    gets,
    dram_hits,
    flash_hits,
    misses,
    sets,
    deletes,
    client_bytes_written,
    flash_bytes_written,
    /// Reads issued by lookups and invalidations (not reclaim scans).
    flash_reads,
    segments_written,
    segments_erased,
    ghosts_marked,
    ghost_revivals,
    dram_evictions,
    reclaim_scanned,
    reclaim_reinserted,
    reclaim_dropped,
    displaced_entries,
    /// Invalidated records hidden by a dead-key mark rather than cleared.
    tombstoned_records,
    budget_throttles,
    /// Record bytes placed into written segments; the rest is padding.
    segment_used_bytes,
    index_table_bytes,
    bloom_bytes,
    live_flash_objects,
    ghost_flash_objects,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub hit_rate: f64,
    pub clwa: f64,
    pub flash_reads_per_flash_hit: f64,
    pub bytes_per_flash_object: f64,
    pub segment_utilization: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn derive(c: &CounterSet) -> Derived {
    Derived {
        hit_rate: ratio(c.dram_hits + c.flash_hits, c.gets),
        clwa: ratio(c.flash_bytes_written, c.client_bytes_written),
        flash_reads_per_flash_hit: ratio(c.flash_reads, c.flash_hits),
        bytes_per_flash_object: ratio(c.index_table_bytes + c.bloom_bytes, c.live_flash_objects),
        segment_utilization: ratio(c.segment_used_bytes, c.flash_bytes_written),
    }
}

/// Flat JSON report: identity fields, every counter, then derived values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub policy: String,
    /// Set for baselines that only approximate the system they are named after.
    pub approximation: bool,
    pub seed: u64,
    #[serde(flatten)]
    pub counters: CounterSet,
    #[serde(flatten)]
    pub derived: Derived,
}

impl MetricsReport {
    pub fn new(policy: &str, seed: u64, counters: CounterSet) -> Self {
        MetricsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            policy: policy.to_string(),
            approximation: false,
            seed,
            counters,
            derived: derive(&counters),
        }
    }

    pub fn dram_hit_fraction(&self) -> f64 {
        ratio(self.counters.dram_hits, self.counters.gets)
    }

    pub fn flash_hit_fraction(&self) -> f64 {
        ratio(self.counters.flash_hits, self.counters.gets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_denominators() {
        let d = derive(&CounterSet::default());
        assert_eq!(d, Derived::default());
    }

    #[test]
    fn clwa_arithmetic() {
        let c = CounterSet {
            flash_bytes_written: 4 << 20,
            client_bytes_written: 8 << 20,
            ..Default::default()
        };
        assert_eq!(derive(&c).clwa, 0.5);
    }

    #[test]
    fn reads_per_hit() {
        let c = CounterSet {
            flash_hits: 1_000_000,
            flash_reads: 1_030_000,
            ..Default::default()
        };
        assert!((derive(&c).flash_reads_per_flash_hit - 1.03).abs() < 1e-12);
    }

    #[test]
    fn hit_rate_and_footprint() {
        let c = CounterSet {
            gets: 10,
            dram_hits: 3,
            flash_hits: 2,
            misses: 5,
            index_table_bytes: 4000,
            bloom_bytes: 1250,
            live_flash_objects: 1000,
            ..Default::default()
        };
        let d = derive(&c);
        assert_eq!(d.hit_rate, 0.5);
        assert_eq!(d.bytes_per_flash_object, 5.25);
    }

    #[test]
    fn report_json_is_flat_and_round_trips() {
        let c = CounterSet {
            gets: 4,
            dram_hits: 1,
            ..Default::default()
        };
        let r = MetricsReport::new("flashield", 7, c);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["gets"], 4);
        assert_eq!(v["hit_rate"], 0.25);
        assert_eq!(v["schema_version"], REPORT_SCHEMA_VERSION);
        let back: MetricsReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
        assert_eq!(c.pairs()[0], ("gets", 4));
    }
}
