//! Synthetic workload generator.
//!
//! Operations are drawn independently: a set of a brand-new key with
//! probability `write_ratio`, an update (set of an existing readable key)
//! with `update_fraction`, a delete with `delete_fraction`, otherwise a get.
//! Each new key is marked unread with probability `unread_write_fraction`
//! and is then never touched again. Other new keys take over a popularity
//! slot: there are `key_count` slots with fixed Zipf weights, filled in
//! order and afterwards replaced uniformly at random, so popularity is
//! skewed per key and keys churn. A new readable key also gets a first read
//! a short (exponential) delay later; the remaining reads pick a slot by
//! Zipf rank.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::trace::{Op, TraceEvent};

/// Share of objects below 1 KiB in the production mixture.
pub const SMALL_OBJECT_SHARE: f64 = 0.8067;
pub const MEAN_OBJECT_SIZE: f64 = 257.0;

// The mixture: a log-normal body conditioned below 1 KiB, and a tail of
// 1 KiB plus an exponential excess. A single log-normal cannot have both a
// 257 B mean and 80.67% of its mass below 1 KiB.
const BODY_MU: f64 = 3.4;
const BODY_SIGMA: f64 = 1.0;
const TAIL_EXCESS_MEAN: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeDist {
    /// Calibrated production mixture (mean 257 B, 80.67% below 1 KiB).
    Mixture,
    Fixed { bytes: u32 },
    Uniform { min: u32, max: u32 },
}

impl SizeDist {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SizeDist::Fixed { bytes: 0 } => Err(HarnessError::Spec("fixed size must be ≥ 1".into())),
            SizeDist::Uniform { min, max } if min == 0 || min > max => {
                Err(HarnessError::Spec(format!("bad uniform size range {min}..={max}")))
            }
            _ => Ok(()),
        }
    }

    pub fn sampler(&self) -> SizeSampler {
        SizeSampler {
            dist: self.clone(),
            body: LogNormal::new(BODY_MU, BODY_SIGMA).expect("valid log-normal"),
            tail: Exp::new(1.0 / TAIL_EXCESS_MEAN).expect("valid exponential"),
        }
    }
}

pub struct SizeSampler {
    dist: SizeDist,
    body: LogNormal<f64>,
    tail: Exp<f64>,
}

impl SizeSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self.dist {
            SizeDist::Fixed { bytes } => bytes,
            SizeDist::Uniform { min, max } => rng.gen_range(min..=max),
            SizeDist::Mixture => {
                if rng.gen_bool(SMALL_OBJECT_SHARE) {
                    loop {
                        let v = self.body.sample(rng).round().max(1.0);
                        if v < 1024.0 {
                            return v as u32;
                        }
                    }
                } else {
                    1024 + self.tail.sample(rng).round() as u32
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    /// Popularity slots; each holds one readable key at a time.
    pub key_count: u64,
    pub zipf_alpha: f64,
    /// Operations after the preload.
    pub op_count: u64,
    /// Sets of new keys, as a fraction of operations.
    pub write_ratio: f64,
    /// Sets of existing keys, as a fraction of operations.
    pub update_fraction: f64,
    pub delete_fraction: f64,
    /// Fraction of new keys that are never read.
    pub unread_write_fraction: f64,
    /// Readable keys set before the measured operations start.
    pub preload_keys: u64,
    pub tenants: u32,
    pub ops_per_sec: f64,
    /// Mean delay, in operations, before a new readable key's first read.
    pub first_read_delay_ops: f64,
    pub size: SizeDist,
}

impl Default for WorkloadSpec {
    /// Production-like statistics: 90% reads, 9.5% writes, 0.5% updates,
    /// 60.6% of written keys never read.
    fn default() -> Self {
        WorkloadSpec {
            key_count: 100_000,
            zipf_alpha: 0.9,
            op_count: 1_000_000,
            write_ratio: 0.095,
            update_fraction: 0.005,
            delete_fraction: 0.0,
            unread_write_fraction: 0.606,
            preload_keys: 0,
            tenants: 1,
            ops_per_sec: 1000.0,
            first_read_delay_ops: 2000.0,
            size: SizeDist::Mixture,
        }
    }
}

impl WorkloadSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: WorkloadSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn read_ratio(&self) -> f64 {
        1.0 - self.write_ratio - self.update_fraction - self.delete_fraction
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Spec(m));
        for (name, v) in [
            ("zipf_alpha", self.zipf_alpha),
            ("write_ratio", self.write_ratio),
            ("update_fraction", self.update_fraction),
            ("delete_fraction", self.delete_fraction),
            ("unread_write_fraction", self.unread_write_fraction),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and ≥ 0, got {v}"));
            }
            if name != "zipf_alpha" && v > 1.0 {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if self.read_ratio() < -1e-12 {
            return bad("write, update and delete fractions sum above 1".into());
        }
        if self.key_count == 0 {
            return bad("key_count must be ≥ 1".into());
        }
        if self.tenants == 0 {
            return bad("tenants must be ≥ 1".into());
        }
        if !(self.ops_per_sec > 0.0 && self.ops_per_sec.is_finite()) {
            return bad("ops_per_sec must be positive".into());
        }
        if !(self.first_read_delay_ops >= 0.0 && self.first_read_delay_ops.is_finite()) {
            return bad("first_read_delay_ops must be ≥ 0".into());
        }
        let touches_old = self.read_ratio() > 1e-12 || self.update_fraction > 0.0 || self.delete_fraction > 0.0;
        let readable_source =
            self.preload_keys > 0 || (self.write_ratio > 0.0 && self.unread_write_fraction < 1.0);
        if touches_old && !readable_source {
            return bad("reads, updates or deletes requested but no key can ever be read".into());
        }
        self.size.validate()
    }
}

/// Deterministic event stream for a spec and seed.
pub fn generate(spec: &WorkloadSpec, seed: u64) -> Result<Generator> {
    spec.validate()?;
    Ok(Generator::new(spec.clone(), seed))
}

pub struct Generator {
    spec: WorkloadSpec,
    rng: ChaCha8Rng,
    sizes: SizeSampler,
    zipf: Zipf<f64>,
    first_read_delay: Option<Exp<f64>>,
    /// Readable key currently holding each popularity slot.
    slots: Vec<u64>,
    /// (due operation, key id) of pending first reads.
    pending: BinaryHeap<Reverse<(u64, u64)>>,
    next_id: u64,
    emitted: u64,
    total: u64,
}

impl Generator {
    fn new(spec: WorkloadSpec, seed: u64) -> Self {
        let zipf = Zipf::new(spec.key_count, spec.zipf_alpha).expect("validated zipf");
        let first_read_delay = (spec.first_read_delay_ops > 0.0)
            .then(|| Exp::new(1.0 / spec.first_read_delay_ops).expect("validated delay"));
        Generator {
            sizes: spec.size.sampler(),
            total: spec.preload_keys + spec.op_count,
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            zipf,
            first_read_delay,
            slots: Vec::new(),
            pending: BinaryHeap::new(),
            next_id: 0,
            emitted: 0,
        }
    }

    fn key_name(&self, id: u64) -> (String, String) {
        let tenant = format!("t{}", id % self.spec.tenants as u64);
        let key = format!("{tenant}:k{id}");
        (tenant, key)
    }

    fn event(&mut self, op: Op, id: u64) -> TraceEvent {
        let ts = (self.emitted as f64 * 1e6 / self.spec.ops_per_sec) as u64;
        let value_size = if op == Op::Set {
            self.sizes.sample(&mut self.rng)
        } else {
            0
        };
        let (tenant, key) = self.key_name(id);
        TraceEvent {
            timestamp_us: ts,
            tenant,
            op,
            key,
            value_size,
        }
    }

    fn take_slot(&mut self, id: u64) {
        if (self.slots.len() as u64) < self.spec.key_count {
            self.slots.push(id);
        } else {
            let i = self.rng.gen_range(0..self.slots.len());
            self.slots[i] = id;
        }
    }

    fn new_key(&mut self, readable: bool) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        if readable {
            self.take_slot(id);
            let delay = self
                .first_read_delay
                .map_or(0.0, |d| d.sample(&mut self.rng))
                .round() as u64;
            self.pending.push(Reverse((self.emitted + 1 + delay, id)));
        }
        id
    }

    /// Readable key chosen by Zipf rank over slots. Until every slot is
    /// filled, ranks wrap around the filled ones.
    fn popular_key(&mut self) -> u64 {
        let n = self.slots.len() as u64;
        let rank = self.zipf.sample(&mut self.rng) as u64;
        self.slots[((rank - 1) % n) as usize]
    }
}

impl Iterator for Generator {
    type Item = TraceEvent;

    fn next(&mut self) -> Option<TraceEvent> {
        if self.emitted >= self.total {
            return None;
        }
        let ev = if self.emitted < self.spec.preload_keys {
            let id = self.next_id;
            self.next_id += 1;
            self.take_slot(id);
            self.event(Op::Set, id)
        } else {
            let u: f64 = self.rng.gen();
            let s = &self.spec;
            let (w, up, del) = (s.write_ratio, s.write_ratio + s.update_fraction,
                s.write_ratio + s.update_fraction + s.delete_fraction);
            if u < w || self.slots.is_empty() {
                let readable = !self.rng.gen_bool(self.spec.unread_write_fraction);
                let id = self.new_key(readable);
                self.event(Op::Set, id)
            } else if u < up {
                let id = self.popular_key();
                self.event(Op::Set, id)
            } else if u < del {
                let id = self.popular_key();
                self.event(Op::Delete, id)
            } else {
                let due = matches!(self.pending.peek(), Some(Reverse((at, _))) if *at <= self.emitted);
                let id = if due {
                    self.pending.pop().expect("peeked").0 .1
                } else {
                    self.popular_key()
                };
                self.event(Op::Get, id)
            }
        };
        self.emitted += 1;
        Some(ev)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.total - self.emitted) as usize;
        (left, Some(left))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(op_count: u64) -> WorkloadSpec {
        WorkloadSpec {
            key_count: 1000,
            op_count,
            ..WorkloadSpec::default()
        }
    }

    #[test]
    fn seed_determinism() {
        let a: Vec<_> = generate(&small(5000), 3).unwrap().collect();
        let b: Vec<_> = generate(&small(5000), 3).unwrap().collect();
        let c: Vec<_> = generate(&small(5000), 4).unwrap().collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 5000);
    }

    #[test]
    fn write_only_stream() {
        let spec = WorkloadSpec {
            write_ratio: 1.0,
            update_fraction: 0.0,
            unread_write_fraction: 1.0,
            op_count: 10_000,
            ..WorkloadSpec::default()
        };
        let events: Vec<_> = generate(&spec, 1).unwrap().collect();
        assert!(events.iter().all(|e| e.op == Op::Set));
        let keys: HashSet<_> = events.iter().map(|e| &e.key).collect();
        assert_eq!(keys.len(), events.len());
    }

    #[test]
    fn infeasible_specs_rejected() {
        let no_readable = WorkloadSpec {
            unread_write_fraction: 1.0,
            ..WorkloadSpec::default()
        };
        assert!(matches!(no_readable.validate(), Err(HarnessError::Spec(_))));
        let over = WorkloadSpec {
            write_ratio: 0.7,
            update_fraction: 0.4,
            ..WorkloadSpec::default()
        };
        assert!(over.validate().is_err());
        let neg = WorkloadSpec {
            zipf_alpha: -1.0,
            ..WorkloadSpec::default()
        };
        assert!(neg.validate().is_err());
        let only_reads = WorkloadSpec {
            write_ratio: 0.0,
            update_fraction: 0.0,
            ..WorkloadSpec::default()
        };
        assert!(only_reads.validate().is_err());
        assert!(WorkloadSpec { preload_keys: 10, ..only_reads }.validate().is_ok());
        assert!(SizeDist::Uniform { min: 5, max: 4 }.validate().is_err());
    }

    #[test]
    fn keys_are_set_before_use() {
        let mut seen: HashSet<String> = HashSet::new();
        for e in generate(&small(50_000), 9).unwrap() {
            if e.op == Op::Set {
                assert!(e.value_size >= 1);
                seen.insert(e.key);
            } else {
                assert!(seen.contains(&e.key), "{} touched before set", e.key);
            }
        }
    }

    #[test]
    fn json_spec_with_defaults() {
        let s = WorkloadSpec::from_json(r#"{"op_count": 10, "size": {"kind": "fixed", "bytes": 7}}"#).unwrap();
        assert_eq!(s.op_count, 10);
        assert_eq!(s.size, SizeDist::Fixed { bytes: 7 });
        assert_eq!(s.write_ratio, 0.095);
        assert!(WorkloadSpec::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn tenants_prefix_keys() {
        let spec = WorkloadSpec {
            tenants: 3,
            ..small(2000)
        };
        for e in generate(&spec, 2).unwrap() {
            assert!(e.key.starts_with(&format!("{}:", e.tenant)));
        }
    }
}
