//! The cache façade: DRAM first, flash second, with per-tenant classifiers
//! and counters. Maintenance (flush, reclaim, ghost marking) lives in
//! [`crate::cleaner`].

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use crate::classifier::{ClassifierConfig, Model, TenantClassifier};
use crate::cleaner::WriteBudget;
use crate::config::EngineConfig;
use crate::device::{FlashDevice, MemDevice, SegmentSeq};
use crate::dram::{DramStore, PutOutcome, TenantId};
use crate::error::{Error, Result};
use crate::index::IndexTable;
use crate::metrics::{CounterSet, MetricsReport};
use crate::model::{record_len, HashFamily, Key, Timestamp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HitKind {
    Dram,
    Flash,
    Miss,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GetOutcome {
    pub value: Option<Vec<u8>>,
    pub kind: HitKind,
    pub flash_reads: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetOutcome {
    Stored,
    /// A flash-resident version was invalidated.
    StoredWithInvalidation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeleteOutcome {
    Deleted,
    Absent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tier {
    Dram,
    Flash,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Ghost,
    /// No index entry reaches the record any more (displaced or invalidated).
    Unreachable,
    /// Re-insertion found no DRAM room.
    NoRoom,
}

/// Object lifecycle transitions, recorded only when enabled (audits).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EngineEvent {
    Stored { key: Key },
    /// The previous version of `key` was replaced by a set.
    Superseded { key: Key },
    Deleted { key: Key },
    DramEvicted { key: Key },
    Flushed { key: Key, seq: SegmentSeq },
    Reinserted { key: Key, seq: SegmentSeq },
    Dropped { key: Key, seq: SegmentSeq, reason: DropReason },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TenantCounters {
    pub gets: u64,
    pub dram_hits: u64,
    pub flash_hits: u64,
    pub misses: u64,
    pub sets: u64,
    pub deletes: u64,
    pub client_bytes_written: u64,
}

#[derive(Debug)]
pub struct TenantState {
    pub name: String,
    pub classifier: TenantClassifier,
    pub counters: TenantCounters,
}

pub struct Engine {
    pub(crate) cfg: EngineConfig,
    pub(crate) hashes: HashFamily,
    pub(crate) dram: DramStore,
    pub(crate) index: IndexTable,
    pub(crate) device: Box<dyn FlashDevice>,
    pub(crate) tenants: Vec<TenantState>,
    tenant_ids: HashMap<String, TenantId>,
    pub(crate) counters: CounterSet,
    pub(crate) budget: WriteBudget,
    pub(crate) ghost_cursor: usize,
    /// (request count, candidate bytes) at the last DRAM ranking.
    pub(crate) rank_hint: Option<(u64, u64)>,
    pub(crate) events: Option<Vec<EngineEvent>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("dram_objects", &self.dram.len())
            .field("flash_segments", &self.device.live_segments())
            .field("tenants", &self.tenants.len())
            .finish()
    }
}

impl Engine {
    /// Engine over an in-memory flash device.
    pub fn new(cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        let dev = MemDevice::new(cfg.segment_bytes(), cfg.num_segment_slots())?;
        Self::with_device(cfg, Box::new(dev))
    }

    /// Engine over a preallocated flash file.
    pub fn with_file(cfg: EngineConfig, path: impl AsRef<Path>) -> Result<Self> {
        cfg.validate()?;
        let dev = crate::device::FileDevice::create(path, cfg.segment_bytes(), cfg.num_segment_slots())?;
        Self::with_device(cfg, Box::new(dev))
    }

    pub fn with_device(cfg: EngineConfig, device: Box<dyn FlashDevice>) -> Result<Self> {
        cfg.validate()?;
        if device.segment_size() != cfg.segment_bytes() {
            return Err(Error::SegmentSize {
                got: device.segment_size(),
                expected: cfg.segment_bytes(),
            });
        }
        let hashes = HashFamily::new(cfg.num_hash_functions)?;
        let index = IndexTable::new(
            hashes,
            cfg.index_slot_count(),
            cfg.segment_bytes(),
            cfg.probe_read_size,
            cfg.clock_bits,
        );
        Ok(Engine {
            hashes,
            dram: DramStore::new(cfg.dram_usable() + cfg.segment_size, cfg.clock_bits),
            index,
            device,
            tenants: Vec::new(),
            tenant_ids: HashMap::new(),
            counters: CounterSet::default(),
            budget: WriteBudget::new(cfg.flash_write_budget, cfg.segment_size),
            ghost_cursor: 0,
            rank_hint: None,
            events: None,
            cfg,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn dram(&self) -> &DramStore {
        &self.dram
    }

    pub fn index(&self) -> &IndexTable {
        &self.index
    }

    pub fn device(&self) -> &dyn FlashDevice {
        self.device.as_ref()
    }

    /// Start recording lifecycle events.
    pub fn record_events(&mut self) {
        self.events.get_or_insert_with(Vec::new);
    }

    pub fn take_events(&mut self) -> Vec<EngineEvent> {
        self.events.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub(crate) fn emit(&mut self, f: impl FnOnce() -> EngineEvent) {
        if let Some(ev) = self.events.as_mut() {
            ev.push(f());
        }
    }

    pub fn tenant_id(&mut self, name: &str) -> Result<TenantId> {
        if let Some(&id) = self.tenant_ids.get(name) {
            return Ok(id);
        }
        let id = TenantId::try_from(self.tenants.len())
            .map_err(|_| Error::Config("too many tenants".into()))?;
        let cfg = ClassifierConfig {
            threshold: self.cfg.flashiness_read_threshold,
            training_window_secs: self.cfg.training_window_secs,
            label_window_secs: self.cfg.label_window_secs,
            retrain_interval_secs: self.cfg.retrain_interval_secs,
            seed: self.cfg.seed,
        };
        self.tenants.push(TenantState {
            name: name.to_string(),
            classifier: TenantClassifier::new(name, cfg),
            counters: TenantCounters::default(),
        });
        self.tenant_ids.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn tenant(&self, name: &str) -> Option<&TenantState> {
        self.tenant_ids.get(name).map(|&id| &self.tenants[id as usize])
    }

    pub fn tenants(&self) -> impl Iterator<Item = &TenantState> {
        self.tenants.iter()
    }

    /// Install a model (e.g. imported from a file) for `tenant`.
    pub fn set_model(&mut self, tenant: &str, model: Model) -> Result<()> {
        let id = self.tenant_id(tenant)?;
        self.tenants[id as usize].classifier.set_model(model);
        Ok(())
    }

    fn touch_tenant(&mut self, name: &str, now: Timestamp) -> Result<TenantId> {
        let id = self.tenant_id(name)?;
        self.tenants[id as usize].classifier.maybe_train(now);
        Ok(id)
    }

    pub fn get(&mut self, tenant: &str, key: &Key, now: Timestamp) -> Result<GetOutcome> {
        let tid = self.touch_tenant(tenant, now)?;
        self.counters.gets += 1;
        self.tenants[tid as usize].counters.gets += 1;

        if let Some(meta) = self.dram.on_read(key, now) {
            let value = meta.value.clone();
            let owner = meta.tenant as usize;
            let read_count = meta.read_count;
            if let Some(f) = meta.features() {
                self.tenants[owner].classifier.on_read(key, f, read_count, now);
            }
            self.counters.dram_hits += 1;
            self.tenants[tid as usize].counters.dram_hits += 1;
            return Ok(GetOutcome {
                value: Some(value),
                kind: HitKind::Dram,
                flash_reads: 0,
            });
        }

        let lookup = self.index.lookup(key.as_bytes(), self.device.as_ref())?;
        self.counters.flash_reads += lookup.flash_reads as u64;
        match lookup.hit {
            Some(hit) => {
                self.index.clock_touch(hit.slot);
                if self.index.unmark_ghost(hit.slot) {
                    self.counters.ghost_revivals += 1;
                }
                self.tenants[tid as usize].classifier.count_read(key, now);
                self.counters.flash_hits += 1;
                self.tenants[tid as usize].counters.flash_hits += 1;
                Ok(GetOutcome {
                    value: Some(hit.value),
                    kind: HitKind::Flash,
                    flash_reads: lookup.flash_reads,
                })
            }
            None => {
                self.counters.misses += 1;
                self.tenants[tid as usize].counters.misses += 1;
                Ok(GetOutcome {
                    value: None,
                    kind: HitKind::Miss,
                    flash_reads: lookup.flash_reads,
                })
            }
        }
    }

    /// Drop every flash copy of `key`. Returns whether one existed.
    fn invalidate_flash(&mut self, key: &Key) -> Result<bool> {
        let inv = self.index.invalidate(key.as_bytes(), self.device.as_ref())?;
        self.counters.flash_reads += inv.flash_reads as u64;
        self.counters.tombstoned_records += inv.tombstoned as u64;
        Ok(inv.found)
    }

    pub fn set(&mut self, tenant: &str, key: Key, value: Vec<u8>, now: Timestamp) -> Result<SetOutcome> {
        let len = record_len(key.len(), value.len()) as u64;
        let limit = self.cfg.max_record_len();
        if len > limit {
            return Err(Error::Oversize { len, limit });
        }
        let tid = self.touch_tenant(tenant, now)?;

        let in_dram = self.dram.contains(&key);
        let on_flash = !in_dram && self.invalidate_flash(&key)?;
        if in_dram || on_flash {
            self.end_of_life(&key);
            self.emit(|| EngineEvent::Superseded { key: key.clone() });
        }

        // Make room for the incoming record; the cleaner normally keeps a
        // segment free so this rarely has to do anything.
        let reclaimable = self.dram.get(&key).map_or(0, |m| m.size());
        while self.dram.free_bytes() + reclaimable < len {
            if !self.relieve_pressure(now, true)? {
                break;
            }
        }
        let outcome = self.dram.put(key.clone(), value, tid, now)?;
        debug_assert!(outcome == PutOutcome::Replaced || !in_dram);
        self.counters.sets += 1;
        self.counters.client_bytes_written += len;
        let tc = &mut self.tenants[tid as usize].counters;
        tc.sets += 1;
        tc.client_bytes_written += len;
        self.emit(|| EngineEvent::Stored { key });
        self.maintain(now)?;
        Ok(if on_flash {
            SetOutcome::StoredWithInvalidation
        } else {
            SetOutcome::Stored
        })
    }

    pub fn delete(&mut self, tenant: &str, key: &Key, now: Timestamp) -> Result<DeleteOutcome> {
        let tid = self.touch_tenant(tenant, now)?;
        let removed = self.dram.remove(key).is_some() || self.invalidate_flash(key)?;
        if !removed {
            return Ok(DeleteOutcome::Absent);
        }
        self.end_of_life(key);
        self.counters.deletes += 1;
        self.tenants[tid as usize].counters.deletes += 1;
        self.emit(|| EngineEvent::Deleted { key: key.clone() });
        Ok(DeleteOutcome::Deleted)
    }

    /// Close the label window of every tenant's sample of `key`.
    pub(crate) fn end_of_life(&mut self, key: &Key) {
        for t in &mut self.tenants {
            t.classifier.on_end(key);
        }
    }

    /// Where `key` currently lives, without touching statistics or CLOCK bits.
    pub fn peek(&self, key: &Key) -> Result<Option<Tier>> {
        if self.dram.contains(key) {
            return Ok(Some(Tier::Dram));
        }
        let l = self.index.peek(key.as_bytes(), self.device.as_ref())?;
        Ok(l.hit.map(|_| Tier::Flash))
    }

    /// Counter snapshot with footprint gauges filled in.
    pub fn counters(&self) -> CounterSet {
        let mut c = self.counters;
        let fp = self.index.memory_footprint();
        c.index_table_bytes = fp.table_bytes;
        c.bloom_bytes = fp.bloom_bytes;
        c.live_flash_objects = fp.live_objects;
        c.ghost_flash_objects = self.index.ghost_entries();
        c
    }

    pub fn report(&self, policy: &str) -> MetricsReport {
        MetricsReport::new(policy, self.cfg.seed, self.counters())
    }
}
