//! Engine configuration and its flat `key = value` file format.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::MAX_HASH_FUNCTIONS;

const KIB: u64 = 1024;
const MIB: u64 = 1024 * KIB;
const GIB: u64 = 1024 * MIB;

/// Segment sequence numbers are stored in 24 bits of an index entry, so the
/// number of physical slots must stay below this.
pub const MAX_SEGMENT_SLOTS: u64 = 1 << 24;

/// Expected bytes per flash object used to size the index table by default.
pub const DEFAULT_BYTES_PER_SLOT: u64 = 256;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EngineConfig {
    pub dram_capacity: u64,
    pub flash_capacity: u64,
    pub segment_size: u64,
    pub num_hash_functions: usize,
    pub clock_bits: u8,
    pub bloom_fp_rate: f64,
    pub hot_fraction: f64,
    /// Minimum number of future reads that makes an object flash-worthy.
    pub flashiness_read_threshold: u32,
    /// Flash write budget in bytes per second; `None` is unlimited.
    pub flash_write_budget: Option<f64>,
    pub training_window_secs: f64,
    pub label_window_secs: f64,
    /// Start a new training cycle this long after each model is trained.
    pub retrain_interval_secs: Option<f64>,
    /// Index table slots; `None` derives `flash_capacity / 256` rounded up
    /// to a power of two.
    pub index_slots: Option<u64>,
    pub probe_read_size: usize,
    /// Candidate bytes handed to the segment packer, as a multiple of the
    /// segment size.
    pub flush_pool_factor: f64,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            dram_capacity: 4 * GIB,
            flash_capacity: 28 * GIB,
            segment_size: 512 * MIB,
            num_hash_functions: 16,
            clock_bits: 2,
            bloom_fp_rate: 0.01,
            hot_fraction: 0.70,
            flashiness_read_threshold: 1,
            flash_write_budget: None,
            training_window_secs: 24.0 * 3600.0,
            label_window_secs: 3600.0,
            retrain_interval_secs: None,
            index_slots: None,
            probe_read_size: 4096,
            flush_pool_factor: 2.0,
            seed: 0,
        }
    }
}

impl EngineConfig {
    /// Small configuration with 4 MiB segments and a 1:7 DRAM:flash ratio.
    pub fn for_tests() -> Self {
        EngineConfig {
            dram_capacity: 32 * MIB,
            flash_capacity: 224 * MIB,
            segment_size: 4 * MIB,
            ..EngineConfig::default()
        }
    }

    pub fn segment_bytes(&self) -> usize {
        self.segment_size as usize
    }

    pub fn num_segment_slots(&self) -> u64 {
        self.flash_capacity / self.segment_size.max(1)
    }

    pub fn index_slot_count(&self) -> u64 {
        self.index_slots.unwrap_or_else(|| {
            (self.flash_capacity / DEFAULT_BYTES_PER_SLOT)
                .max(1)
                .next_power_of_two()
        })
    }

    pub fn index_table_bytes(&self) -> u64 {
        4 * self.index_slot_count()
    }

    /// DRAM available for objects: capacity minus the index table and the
    /// staging segment used to build flash-bound segments.
    pub fn dram_usable(&self) -> u64 {
        self.dram_capacity
            .saturating_sub(self.index_table_bytes())
            .saturating_sub(self.segment_size)
    }

    /// Hot data threshold in bytes.
    pub fn hot_data_threshold(&self) -> f64 {
        self.dram_usable() as f64 + self.flash_capacity as f64 * self.hot_fraction
    }

    pub fn max_clock(&self) -> u8 {
        (1u8 << self.clock_bits) - 1
    }

    /// Largest record the engine accepts: it must fit in one segment.
    pub fn max_record_len(&self) -> u64 {
        self.segment_size.min(self.dram_usable())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.segment_size == 0 {
            return bad("segment_size must be positive".into());
        }
        if self.segment_size > u32::MAX as u64 {
            return bad("segment_size must fit in 32 bits".into());
        }
        if self.flash_capacity % self.segment_size != 0 {
            return bad(format!(
                "flash_capacity ({}) must be a multiple of segment_size ({})",
                self.flash_capacity, self.segment_size
            ));
        }
        let slots = self.num_segment_slots();
        if slots == 0 || slots >= MAX_SEGMENT_SLOTS {
            return bad(format!(
                "flash must hold between 1 and {} segments, got {slots}",
                MAX_SEGMENT_SLOTS - 1
            ));
        }
        if self.dram_capacity <= 2 * self.segment_size {
            return bad("dram_capacity must exceed two segments".into());
        }
        if self.dram_usable() <= self.segment_size {
            return bad(format!(
                "dram_capacity leaves {} usable bytes after the {}-byte index table and \
                 staging segment; need more than one segment",
                self.dram_usable(),
                self.index_table_bytes()
            ));
        }
        if self.num_hash_functions == 0 || self.num_hash_functions > MAX_HASH_FUNCTIONS {
            return bad(format!(
                "num_hash_functions must be in 1..={MAX_HASH_FUNCTIONS}"
            ));
        }
        if !(1..=2).contains(&self.clock_bits) {
            return bad("clock_bits must be 1 or 2".into());
        }
        if !(self.bloom_fp_rate > 0.0 && self.bloom_fp_rate < 1.0) {
            return bad("bloom_fp_rate must be in (0, 1)".into());
        }
        if !(self.hot_fraction > 0.0 && self.hot_fraction <= 1.0) {
            return bad("hot_fraction must be in (0, 1]".into());
        }
        if self.flashiness_read_threshold == 0 {
            return bad("flashiness_read_threshold must be at least 1".into());
        }
        if matches!(self.flash_write_budget, Some(b) if !(b >= 0.0)) {
            return bad("flash_write_budget must be non-negative".into());
        }
        if !(self.training_window_secs >= 0.0 && self.label_window_secs >= 0.0) {
            return bad("training and label windows must be non-negative".into());
        }
        if let Some(n) = self.index_slots {
            if n == 0 || !n.is_power_of_two() {
                return bad("index_slots must be a power of two".into());
            }
        }
        if self.probe_read_size < crate::model::RECORD_HEADER_LEN {
            return bad("probe_read_size must cover a record header".into());
        }
        if !(self.flush_pool_factor >= 1.0) {
            return bad("flush_pool_factor must be at least 1".into());
        }
        Ok(())
    }

    /// Apply one `name = value` setting.
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match name.trim() {
            "dram_capacity" => self.dram_capacity = parse_size(value)?,
            "flash_capacity" => self.flash_capacity = parse_size(value)?,
            "segment_size" => self.segment_size = parse_size(value)?,
            "num_hash_functions" => self.num_hash_functions = parse_num(name, value)?,
            "clock_bits" => self.clock_bits = parse_num(name, value)?,
            "bloom_fp_rate" => self.bloom_fp_rate = parse_num(name, value)?,
            "hot_fraction" => self.hot_fraction = parse_num(name, value)?,
            "flashiness_read_threshold" => {
                self.flashiness_read_threshold = parse_num(name, value)?
            }
            "flash_write_budget" => {
                self.flash_write_budget = if value.eq_ignore_ascii_case("unlimited") {
                    None
                } else {
                    Some(parse_size(value)? as f64)
                }
            }
            "training_window" | "training_window_secs" => {
                self.training_window_secs = parse_num(name, value)?
            }
            "label_window" | "label_window_secs" => {
                self.label_window_secs = parse_num(name, value)?
            }
            "retrain_interval" | "retrain_interval_secs" => {
                self.retrain_interval_secs = if value.eq_ignore_ascii_case("off") {
                    None
                } else {
                    Some(parse_num(name, value)?)
                }
            }
            "index_slots" => self.index_slots = Some(parse_size(value)?),
            "probe_read_size" => self.probe_read_size = parse_size(value)? as usize,
            "flush_pool_factor" => self.flush_pool_factor = parse_num(name, value)?,
            "seed" => self.seed = parse_num(name, value)?,
            other => return Err(Error::Config(format!("unknown setting `{other}`"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` document on top of the defaults. Blank
    /// lines and `#` comments are ignored.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = EngineConfig::default();
        cfg.apply_kv_str(text)?;
        Ok(cfg)
    }

    pub fn apply_kv_str(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `name = value`", lineno + 1))
            })?;
            self.set(name, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }

    /// Render as a `key = value` document accepted by [`from_kv_str`](Self::from_kv_str).
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("dram_capacity", self.dram_capacity.to_string());
        line("flash_capacity", self.flash_capacity.to_string());
        line("segment_size", self.segment_size.to_string());
        line("num_hash_functions", self.num_hash_functions.to_string());
        line("clock_bits", self.clock_bits.to_string());
        line("bloom_fp_rate", self.bloom_fp_rate.to_string());
        line("hot_fraction", self.hot_fraction.to_string());
        line(
            "flashiness_read_threshold",
            self.flashiness_read_threshold.to_string(),
        );
        line(
            "flash_write_budget",
            match self.flash_write_budget {
                None => "unlimited".into(),
                Some(b) => (b as u64).to_string(),
            },
        );
        line("training_window", self.training_window_secs.to_string());
        line("label_window", self.label_window_secs.to_string());
        line(
            "retrain_interval",
            self.retrain_interval_secs
                .map_or_else(|| "off".into(), |s| s.to_string()),
        );
        if let Some(n) = self.index_slots {
            line("index_slots", n.to_string());
        }
        line("probe_read_size", self.probe_read_size.to_string());
        line("flush_pool_factor", self.flush_pool_factor.to_string());
        line("seed", self.seed.to_string());
        out
    }
}

fn parse_num<T: std::str::FromStr>(name: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{}`", name.trim())))
}

/// Parse a byte count with an optional `K`/`M`/`G` (or `KiB`/`MiB`/`GiB`)
/// binary suffix.
pub fn parse_size(value: &str) -> Result<u64> {
    let v = value.trim();
    let split = v
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(v.len());
    let (digits, suffix) = v.split_at(split);
    let n: u64 = digits
        .parse()
        .map_err(|_| Error::Config(format!("bad size `{value}`")))?;
    let mult = match suffix.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" | "kib" => KIB,
        "m" | "mb" | "mib" => MIB,
        "g" | "gb" | "gib" => GIB,
        _ => return Err(Error::Config(format!("bad size suffix in `{value}`"))),
    };
    n.checked_mul(mult)
        .ok_or_else(|| Error::Config(format!("size `{value}` overflows")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        EngineConfig::default().validate().unwrap();
        EngineConfig::for_tests().validate().unwrap();
        assert_eq!(EngineConfig::default().segment_size, 512 * MIB);
        assert_eq!(EngineConfig::for_tests().segment_size, 4 * MIB);
    }

    #[test]
    fn rejects_broken_invariants() {
        let base = EngineConfig::for_tests();
        let mut c = base.clone();
        c.flash_capacity += 1;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.dram_capacity = 2 * c.segment_size;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.num_hash_functions = 17;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.index_slots = Some(1000);
        assert!(c.validate().is_err());
        let mut c = base;
        c.flash_capacity = c.segment_size * MAX_SEGMENT_SLOTS;
        assert!(c.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = EngineConfig::for_tests();
        cfg.flash_write_budget = Some(1_000_000.0);
        cfg.index_slots = Some(1 << 16);
        cfg.retrain_interval_secs = Some(7200.0);
        let parsed = EngineConfig::from_kv_str(&cfg.to_kv_string()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn kv_parsing() {
        let cfg = EngineConfig::from_kv_str(
            "# test\nsegment_size = 4MiB\ndram_capacity=64M\n\nflash_capacity = 448 MiB # x\n",
        )
        .unwrap();
        assert_eq!(cfg.segment_size, 4 * MIB);
        assert_eq!(cfg.dram_capacity, 64 * MIB);
        assert_eq!(cfg.flash_capacity, 448 * MIB);
        assert!(EngineConfig::from_kv_str("bogus = 1").is_err());
        assert!(EngineConfig::from_kv_str("segment_size 4").is_err());
        assert_eq!(parse_size("3k").unwrap(), 3072);
        assert!(parse_size("3q").is_err());
    }

    #[test]
    fn derived_sizes() {
        let cfg = EngineConfig::for_tests();
        // 224 MiB / 256 B = 917504 slots -> 2^20
        assert_eq!(cfg.index_slot_count(), 1 << 20);
        assert_eq!(cfg.index_table_bytes(), 4 * MIB);
        assert_eq!(cfg.dram_usable(), 32 * MIB - 4 * MIB - 4 * MIB);
        assert_eq!(cfg.max_clock(), 3);
    }
}
