//! Trace replay against the engine or a baseline, plus parameter sweeps.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use hybridcache::engine::HitKind;
use hybridcache::metrics::{CounterSet, MetricsReport};
use hybridcache::model::record_len;
use hybridcache::{Engine, EngineConfig, Error as EngineError, Key, Timestamp};
use serde::Serialize;

use crate::baseline::{Baseline, LruOracle, Ripq8, VictimCache};
use crate::error::{HarnessError, Result};
use crate::trace::{Op, TraceEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Flashield,
    Victim,
    Ripq8,
    DramLruOracle,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Flashield, Policy::Victim, Policy::Ripq8, Policy::DramLruOracle];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Flashield => "flashield",
            Policy::Victim => "victim",
            Policy::Ripq8 => "ripq8",
            Policy::DramLruOracle => "dram_lru_oracle",
        }
    }

    /// Baselines that only approximate the system they are named after.
    pub fn is_approximation(self) -> bool {
        self == Policy::Ripq8
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown policy {s:?} (expected flashield, victim, ripq8 or dram_lru_oracle)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplayOptions {
    /// On a get miss for a key that logically exists, set it again at the
    /// same timestamp, as a look-aside client would after fetching it from
    /// the backing store.
    pub cache_aside: bool,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions { cache_aside: true }
    }
}

/// Uniform interface over the engine and the baselines.
enum Subject {
    Engine(Box<Engine>),
    Baseline(Box<dyn Baseline>),
}

impl Subject {
    fn new(policy: Policy, cfg: &EngineConfig) -> Result<Self> {
        let dram = cfg.dram_usable();
        let slots = cfg.num_segment_slots();
        let flash = slots * cfg.segment_size;
        Ok(match policy {
            Policy::Flashield => Subject::Engine(Box::new(Engine::new(cfg.clone())?)),
            Policy::Victim => Subject::Baseline(Box::new(VictimCache::new(dram, cfg.segment_size, slots))),
            Policy::Ripq8 => Subject::Baseline(Box::new(Ripq8::new(flash, cfg.segment_size))),
            Policy::DramLruOracle => Subject::Baseline(Box::new(LruOracle::new(dram))),
        })
    }

    fn get(&mut self, ev: &TraceEvent, now: Timestamp) -> Result<HitKind> {
        match self {
            Subject::Engine(e) => Ok(e.get(&ev.tenant, &Key::try_from(ev.key.as_str())?, now)?.kind),
            Subject::Baseline(b) => Ok(b.get(&ev.key)),
        }
    }

    fn set(&mut self, ev: &TraceEvent, size: u32, now: Timestamp) -> Result<()> {
        match self {
            Subject::Engine(e) => {
                let key = Key::try_from(ev.key.as_str())?;
                e.set(&ev.tenant, key, vec![0u8; size as usize], now)?;
            }
            Subject::Baseline(b) => b.set(&ev.key, record_len(ev.key.len(), size as usize) as u64),
        }
        Ok(())
    }

    fn delete(&mut self, ev: &TraceEvent, now: Timestamp) -> Result<()> {
        match self {
            Subject::Engine(e) => {
                e.delete(&ev.tenant, &Key::try_from(ev.key.as_str())?, now)?;
            }
            Subject::Baseline(b) => {
                b.delete(&ev.key);
            }
        }
        Ok(())
    }

    fn counters(&self) -> CounterSet {
        match self {
            Subject::Engine(e) => e.counters(),
            Subject::Baseline(b) => b.counters(),
        }
    }
}

/// Incremental replay: feed events one at a time, then take the report.
pub struct Replayer {
    policy: Policy,
    subject: Subject,
    opts: ReplayOptions,
    limit: u64,
    seed: u64,
    // Current logical value size of every key, for look-aside refills.
    live: HashMap<String, u32>,
    skipped: u64,
    last_ts: u64,
}

impl Replayer {
    pub fn new(policy: Policy, cfg: &EngineConfig, opts: ReplayOptions) -> Result<Self> {
        cfg.validate()?;
        Ok(Replayer {
            policy,
            subject: Subject::new(policy, cfg)?,
            opts,
            limit: cfg.max_record_len(),
            seed: cfg.seed,
            live: HashMap::new(),
            skipped: 0,
            last_ts: 0,
        })
    }

    pub fn apply(&mut self, ev: &TraceEvent) -> Result<()> {
        if ev.timestamp_us < self.last_ts {
            return Err(HarnessError::Unordered { line: 0 });
        }
        self.last_ts = ev.timestamp_us;
        let now = Timestamp(ev.timestamp_us);
        match ev.op {
            Op::Get => {
                let kind = self.subject.get(ev, now)?;
                if kind == HitKind::Miss && self.opts.cache_aside {
                    if let Some(&size) = self.live.get(&ev.key) {
                        self.subject.set(ev, size, now)?;
                    }
                }
            }
            Op::Set => {
                if record_len(ev.key.len(), ev.value_size as usize) as u64 > self.limit {
                    self.skipped += 1;
                    return Ok(());
                }
                if self.opts.cache_aside {
                    self.live.insert(ev.key.clone(), ev.value_size);
                }
                match self.subject.set(ev, ev.value_size, now) {
                    Err(HarnessError::Engine(EngineError::Oversize { .. })) => self.skipped += 1,
                    other => other?,
                }
            }
            Op::Delete => {
                self.live.remove(&ev.key);
                self.subject.delete(ev, now)?;
            }
        }
        Ok(())
    }

    /// Timestamp of the last applied event.
    pub fn last_timestamp(&self) -> Timestamp {
        Timestamp(self.last_ts)
    }

    /// The engine under test, for the flashield policy.
    pub fn engine_mut(&mut self) -> Option<&mut Engine> {
        match &mut self.subject {
            Subject::Engine(e) => Some(e),
            Subject::Baseline(_) => None,
        }
    }

    pub fn report(&self) -> MetricsReport {
        if self.skipped > 0 {
            log::warn!("{}: skipped {} sets larger than {} bytes", self.policy, self.skipped, self.limit);
        }
        let mut report = MetricsReport::new(self.policy.as_str(), self.seed, self.subject.counters());
        report.approximation = self.policy.is_approximation();
        report
    }
}

/// Replay a fallible event stream (e.g. a trace file being parsed).
pub fn replay_results<I>(events: I, policy: Policy, cfg: &EngineConfig, opts: ReplayOptions) -> Result<MetricsReport>
where
    I: IntoIterator<Item = Result<TraceEvent>>,
{
    let mut r = Replayer::new(policy, cfg, opts)?;
    for ev in events {
        r.apply(&ev?)?;
    }
    Ok(r.report())
}

pub fn replay<I>(events: I, policy: Policy, cfg: &EngineConfig, opts: ReplayOptions) -> Result<MetricsReport>
where
    I: IntoIterator<Item = TraceEvent>,
{
    replay_results(events.into_iter().map(Ok), policy, cfg, opts)
}

/// Parameter varied by a sweep.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepParam {
    FlashinessThreshold(Vec<u32>),
    /// `(dram, flash)` parts; total memory is held constant.
    DramRatio(Vec<(u64, u64)>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub setting: String,
    pub report: MetricsReport,
}

/// Configuration for one DRAM:flash ratio at the base config's total
/// memory, flash rounded down to whole segments.
pub fn config_for_ratio(base: &EngineConfig, dram_part: u64, flash_part: u64) -> EngineConfig {
    let total = base.dram_capacity + base.flash_capacity;
    let parts = dram_part + flash_part;
    let flash = (total / parts * flash_part) / base.segment_size * base.segment_size;
    EngineConfig {
        dram_capacity: total - flash,
        flash_capacity: flash,
        ..base.clone()
    }
}

pub fn sweep(
    events: &[TraceEvent],
    policy: Policy,
    base: &EngineConfig,
    param: &SweepParam,
    opts: ReplayOptions,
) -> Result<Vec<SweepRow>> {
    let settings: Vec<(String, EngineConfig)> = match param {
        SweepParam::FlashinessThreshold(ns) => ns
            .iter()
            .map(|&n| {
                let cfg = EngineConfig {
                    flashiness_read_threshold: n,
                    ..base.clone()
                };
                (format!("threshold={n}"), cfg)
            })
            .collect(),
        SweepParam::DramRatio(ratios) => ratios
            .iter()
            .map(|&(d, f)| (format!("dram_ratio={d}:{f}"), config_for_ratio(base, d, f)))
            .collect(),
    };
    settings
        .into_iter()
        .map(|(setting, cfg)| {
            let report = replay(events.iter().cloned(), policy, &cfg, opts)?;
            Ok(SweepRow { setting, report })
        })
        .collect()
}

/// Fixed-width comparison table of sweep rows.
pub fn format_table(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:<20} {:>10} {:>8} {:>10} {:>16} {:>16}\n",
        "setting", "policy", "hit_%", "clwa", "flash_bytes", "client_bytes"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<20} {:>10} {:>8.2} {:>10.3} {:>16} {:>16}\n",
            r.setting,
            r.report.policy,
            r.report.derived.hit_rate * 100.0,
            r.report.derived.clwa,
            r.report.counters.flash_bytes_written,
            r.report.counters.client_bytes_written,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EngineConfig {
        EngineConfig {
            dram_capacity: 1 << 20,
            flash_capacity: 8 << 16,
            segment_size: 1 << 16,
            training_window_secs: 10.0,
            label_window_secs: 5.0,
            ..EngineConfig::default()
        }
    }

    fn tiny_trace() -> Vec<TraceEvent> {
        vec![
            TraceEvent::set(0, "a", "a:1", 100),
            TraceEvent::get(1, "a", "a:1"),
            TraceEvent::get(2, "a", "a:2"),
            TraceEvent::delete(3, "a", "a:1"),
            TraceEvent::get(4, "a", "a:1"),
        ]
    }

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.as_str().parse::<Policy>().unwrap(), p);
        }
        assert!("lru".parse::<Policy>().is_err());
    }

    #[test]
    fn all_policies_agree_on_a_tiny_trace() {
        for p in Policy::ALL {
            let r = replay(tiny_trace(), p, &cfg(), ReplayOptions::default()).unwrap();
            let c = r.counters;
            assert_eq!((c.gets, c.dram_hits, c.misses, c.sets, c.deletes), (3, 1, 2, 1, 1), "{p}");
            assert_eq!(c.client_bytes_written, record_len(3, 100) as u64);
            assert_eq!(r.approximation, p == Policy::Ripq8);
            assert_eq!(r.policy, p.as_str());
        }
    }

    #[test]
    fn cache_aside_refills_after_miss() {
        let cfg = cfg();
        let events: Vec<_> = (0..4000u64)
            .map(|i| TraceEvent::set(i, "a", &format!("a:{i}"), 1000))
            .chain([TraceEvent::get(5000, "a", "a:0"), TraceEvent::get(5001, "a", "a:0")])
            .collect();
        let with = replay(events.clone(), Policy::DramLruOracle, &cfg, ReplayOptions::default()).unwrap();
        assert_eq!((with.counters.misses, with.counters.dram_hits), (1, 1));
        assert_eq!(with.counters.sets, 4001);
        let without = replay(events, Policy::DramLruOracle, &cfg, ReplayOptions { cache_aside: false }).unwrap();
        assert_eq!((without.counters.misses, without.counters.sets), (2, 4000));
    }

    #[test]
    fn oversize_sets_are_skipped_by_every_policy() {
        let events = vec![
            TraceEvent::set(0, "a", "a:big", 1 << 20),
            TraceEvent::get(1, "a", "a:big"),
        ];
        for p in Policy::ALL {
            let r = replay(events.clone(), p, &cfg(), ReplayOptions::default()).unwrap();
            assert_eq!((r.counters.sets, r.counters.misses), (0, 1), "{p}");
        }
    }

    #[test]
    fn ratio_configs_keep_total_memory() {
        let base = cfg();
        let total = base.dram_capacity + base.flash_capacity;
        for (d, f) in [(1, 15), (1, 7), (1, 3)] {
            let c = config_for_ratio(&base, d, f);
            assert_eq!(c.dram_capacity + c.flash_capacity, total);
            assert_eq!(c.flash_capacity % c.segment_size, 0);
        }
        let c = config_for_ratio(&base, 1, 3);
        assert_eq!(c.flash_capacity, 1179648 / base.segment_size * base.segment_size);
    }
}
