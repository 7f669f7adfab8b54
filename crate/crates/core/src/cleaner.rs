//! Background maintenance: segment flushes from DRAM, FIFO reclaim of the
//! oldest segment, ghost marking against the hot data threshold, and DRAM
//! eviction when nothing can go to flash.

use crate::builder::{build_segment, Candidate};
use crate::engine::{DropReason, Engine, EngineEvent};
use crate::error::Result;
use crate::model::{deserialize_record, Key, RecordHeader, Timestamp};

/// Token bucket on flash writes, in bytes per second of engine time.
/// Tokens are capped at one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct WriteBudget {
    rate: Option<f64>,
    tokens: f64,
    cap: f64,
    last: Option<Timestamp>,
}

impl WriteBudget {
    pub fn new(rate: Option<f64>, segment_size: u64) -> Self {
        WriteBudget {
            rate,
            tokens: 0.0,
            cap: segment_size as f64,
            last: None,
        }
    }

    pub fn accrue(&mut self, now: Timestamp) {
        let Some(rate) = self.rate else {
            return;
        };
        if let Some(last) = self.last {
            if now > last {
                self.tokens = (self.tokens + rate * now.secs_since(last)).min(self.cap);
            }
        }
        if self.last.is_none_or(|l| now > l) {
            self.last = Some(now);
        }
    }

    pub fn allows_segment(&self) -> bool {
        self.rate.is_none() || self.tokens >= self.cap
    }

    pub fn debit_segment(&mut self) {
        if self.rate.is_some() {
            self.tokens -= self.cap;
        }
    }

    pub fn tokens(&self) -> f64 {
        self.tokens
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaintainReport {
    pub segments_flushed: u64,
    pub segments_reclaimed: u64,
    pub dram_evictions: u64,
    pub ghosts_marked: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReclaimOutcome {
    pub reinserted: u64,
    pub dropped: u64,
}

/// Flashiness-ranked DRAM objects: (key, record length), best first.
fn ranked_candidates(e: &Engine) -> Vec<(Key, u64, f64)> {
    let mut v: Vec<(Key, u64, f64)> = e
        .dram
        .iter()
        .filter_map(|m| {
            let f = m.features();
            let s = e.tenants[m.tenant as usize].classifier.score(f.as_ref());
            (s > 0.0).then(|| (m.key.clone(), m.size(), s))
        })
        .collect();
    v.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    v
}

impl Engine {
    /// Restore a segment of free DRAM: flush flashy objects when a full
    /// segment of them exists and the budget allows, otherwise evict.
    pub fn maintain(&mut self, now: Timestamp) -> Result<MaintainReport> {
        self.budget.accrue(now);
        let before = self.counters;
        let seg = self.cfg.segment_size;
        if self.dram.free_bytes() < seg
            && !self.budget.allows_segment()
            && self.cfg.flash_write_budget != Some(0.0)
        {
            self.counters.budget_throttles += 1;
        }
        let mut flushes = 0;
        while self.dram.free_bytes() < seg {
            // Each flush may force a reclaim that re-admits a segment's worth
            // of objects; after a full pass over flash fall back to eviction.
            let allow_flush = flushes < self.device.num_slots();
            let before = self.counters.segments_written;
            if !self.relieve_pressure(now, allow_flush)? {
                break;
            }
            flushes += self.counters.segments_written - before;
        }
        let c = &self.counters;
        Ok(MaintainReport {
            segments_flushed: c.segments_written - before.segments_written,
            segments_reclaimed: c.segments_erased - before.segments_erased,
            dram_evictions: c.dram_evictions - before.dram_evictions,
            ghosts_marked: c.ghosts_marked - before.ghosts_marked,
        })
    }

    /// Ranking all of DRAM is linear in its size, so the candidate volume is
    /// re-measured only after a batch of requests proportional to DRAM.
    fn ranking_due(&self) -> bool {
        let ops = self.counters.gets + self.counters.sets + self.counters.deletes;
        match self.rank_hint {
            None => true,
            Some((at, _)) => ops - at >= (self.dram.len() as u64 / 64).max(64),
        }
    }

    /// One step of freeing DRAM: a full-segment flush if possible, else a
    /// single eviction. Returns false when DRAM is empty.
    pub(crate) fn relieve_pressure(&mut self, now: Timestamp, allow_flush: bool) -> Result<bool> {
        let seg = self.cfg.segment_size;
        if allow_flush && self.budget.allows_segment() && self.ranking_due() {
            let ranked = ranked_candidates(self);
            let bytes: u64 = ranked.iter().map(|c| c.1).sum();
            let ops = self.counters.gets + self.counters.sets + self.counters.deletes;
            self.rank_hint = Some((ops, bytes));
            if bytes >= seg && self.flush_segment(&ranked, now)? > 0 {
                self.rank_hint = None;
                return Ok(true);
            }
        }
        Ok(self.evict_from_dram())
    }

    /// Evict one DRAM object. While a flush is possible, objects the
    /// classifier would admit are passed over so they can accumulate into
    /// a segment; plain CLOCK applies when nothing else is left.
    pub(crate) fn evict_from_dram(&mut self) -> bool {
        let victim = if self.budget.allows_segment() {
            let tenants = &self.tenants;
            self.dram
                .evict_one_sparing(|m| tenants[m.tenant as usize].classifier.score(m.features().as_ref()) > 0.0)
                .or_else(|| self.dram.evict_one())
        } else {
            self.dram.evict_one()
        };
        match victim {
            Some(meta) => {
                self.counters.dram_evictions += 1;
                self.end_of_life(&meta.key);
                self.emit(|| EngineEvent::DramEvicted { key: meta.key });
                true
            }
            None => false,
        }
    }

    /// Pack the best-ranked candidates into one segment and write it.
    /// Returns the number of objects moved to flash.
    pub fn flush_segment(&mut self, ranked: &[(Key, u64, f64)], now: Timestamp) -> Result<usize> {
        if !self.budget.allows_segment() || ranked.is_empty() {
            return Ok(0);
        }
        let seg = self.cfg.segment_bytes();
        let pool_bytes = (seg as f64 * self.cfg.flush_pool_factor) as u64;
        if self.device.is_full() {
            self.reclaim_oldest(now)?;
        }

        let sealed = {
            let mut pool = Vec::new();
            let mut bytes = 0;
            for (key, len, score) in ranked {
                if bytes >= pool_bytes {
                    break;
                }
                // Reclaim may have evicted some of them.
                if let Some(m) = self.dram.get(key) {
                    pool.push(Candidate { key: &m.key, value: &m.value, score: *score });
                    bytes += len;
                }
            }
            let outcome = build_segment(&self.hashes, seg, &pool);
            if outcome.placed.is_empty() {
                return Ok(0);
            }
            outcome.image.seal(self.cfg.bloom_fp_rate)
        };

        let seq = self.device.append_segment(&sealed.bytes)?;
        self.budget.debit_segment();
        self.counters.segments_written += 1;
        self.counters.flash_bytes_written += seg as u64;
        self.counters.segment_used_bytes += sealed.used_bytes as u64;
        self.index.register_segment(
            seq,
            sealed.bloom,
            sealed.placements.len() as u64,
            sealed.used_bytes as u64,
        );
        for p in &sealed.placements {
            let meta = self.dram.remove(&p.key).expect("placed objects come from DRAM");
            let out = self.index.insert(p.key.as_bytes(), seq, p.hash_fn_id, meta.clock);
            if let crate::index::InsertOutcome::Displaced { .. } = out {
                self.counters.displaced_entries += 1;
            }
            self.emit(|| EngineEvent::Flushed { key: meta.key, seq });
        }
        self.ghost_round();
        Ok(sealed.placements.len())
    }

    /// Flush every current candidate regardless of volume (partial segments
    /// are zero-padded). Returns the number of objects moved.
    pub fn flush_now(&mut self, now: Timestamp) -> Result<usize> {
        self.budget.accrue(now);
        let ranked = ranked_candidates(self);
        let mut moved = 0;
        // Bounded so reclaim re-insertions cannot cycle through flash forever.
        for _ in 0..self.device.num_slots() {
            let n = self.flush_segment(&ranked, now)?;
            if n == 0 {
                break;
            }
            moved += n;
        }
        self.rank_hint = None;
        Ok(moved)
    }

    /// Read back the oldest segment, re-admit its reachable hot objects to
    /// DRAM, drop ghosts and unreachable records, then erase it.
    pub fn reclaim_oldest(&mut self, now: Timestamp) -> Result<ReclaimOutcome> {
        let mut out = ReclaimOutcome::default();
        let Some(seq) = self.device.oldest_live() else {
            return Ok(out);
        };
        let seg = self.cfg.segment_bytes();
        let bytes = self.device.read(seq, 0, seg)?;

        // Records never overlap and gaps are zero, so a record starts at
        // every non-zero byte reached by the scan.
        let mut pos = 0;
        while pos < seg {
            if bytes[pos] == 0 {
                pos += 1;
                continue;
            }
            let Ok(h) = RecordHeader::parse(&bytes[pos..]) else {
                break;
            };
            if pos + h.total_len() > seg {
                break;
            }
            let (key, value, used) = deserialize_record(&bytes[pos..])?;
            let offset = pos;
            pos += used;
            self.counters.reclaim_scanned += 1;

            let Some((_, entry)) = self.index.resolve_record(key.as_bytes(), seq, offset) else {
                out.dropped += 1;
                self.counters.reclaim_dropped += 1;
                self.emit(|| EngineEvent::Dropped { key, seq, reason: DropReason::Unreachable });
                continue;
            };
            // Entries die with the segment below; clearing them one by one
            // could hit an aliasing entry of a record not yet scanned.
            if entry.is_ghost() {
                out.dropped += 1;
                self.counters.reclaim_dropped += 1;
                self.end_of_life(&key);
                self.emit(|| EngineEvent::Dropped { key, seq, reason: DropReason::Ghost });
                continue;
            }
            let len = crate::model::record_len(key.len(), value.len()) as u64;
            while self.dram.free_bytes() < len && self.evict_from_dram() {}
            let tenant = self.dram_tenant_hint(&key);
            if self.dram.insert_reclaimed(key.clone(), value, tenant, entry.clock(), now).is_ok() {
                out.reinserted += 1;
                self.counters.reclaim_reinserted += 1;
                self.emit(|| EngineEvent::Reinserted { key, seq });
            } else {
                out.dropped += 1;
                self.counters.reclaim_dropped += 1;
                self.end_of_life(&key);
                self.emit(|| EngineEvent::Dropped { key, seq, reason: DropReason::NoRoom });
            }
        }
        self.index.drop_oldest_segment();
        self.device.erase_oldest()?;
        self.counters.segments_erased += 1;
        Ok(out)
    }

    /// Tenant of a record read back from flash: looked up by key prefix
    /// among known tenants, falling back to the first tenant.
    fn dram_tenant_hint(&self, key: &Key) -> u16 {
        let prefix = String::from_utf8_lossy(key.tenant());
        self.tenants
            .iter()
            .position(|t| t.name == prefix)
            .unwrap_or(0) as u16
    }

    /// Sweep the index CLOCK, marking entries that reach zero as ghosts,
    /// until DRAM plus hot flash bytes fit under the hot data threshold.
    pub fn ghost_round(&mut self) -> u64 {
        let target = self.cfg.hot_data_threshold() - self.dram.used_bytes() as f64;
        let mut excess = self.index.hot_bytes() - target;
        if excess <= 0.0 {
            return 0;
        }
        let n = self.index.slot_count();
        let limit = n * (self.cfg.max_clock() as usize + 1);
        let mut marked = 0;
        let mut visited = 0;
        while excess > 0.0 && visited < limit {
            let slot = self.ghost_cursor;
            self.ghost_cursor = (self.ghost_cursor + 1) % n;
            visited += 1;
            let e = self.index.entry(slot);
            if !self.index.is_live(e) || e.is_ghost() {
                continue;
            }
            if e.clock() == 0 {
                self.index.mark_ghost(slot);
                excess -= self.index.entry_object_bytes(e);
                marked += 1;
            } else {
                self.index.clock_decrement(slot);
            }
        }
        self.counters.ghosts_marked += marked;
        marked
    }

    /// Quiesce: restore free DRAM, then push every remaining candidate to
    /// flash while the budget allows.
    pub fn drain(&mut self, now: Timestamp) -> Result<()> {
        self.maintain(now)?;
        self.flush_now(now)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use crate::engine::HitKind;

    fn key(s: &str) -> Key {
        Key::try_from(s).unwrap()
    }

    fn t(s: f64) -> Timestamp {
        Timestamp::from_secs_f64(s)
    }

    const SEG: u64 = 1 << 16;

    fn cfg() -> EngineConfig {
        EngineConfig {
            dram_capacity: 1 << 20,
            flash_capacity: 8 * SEG,
            segment_size: SEG,
            ..EngineConfig::for_tests()
        }
    }

    #[test]
    fn budget_token_arithmetic() {
        let mut b = WriteBudget::new(Some(1000.0), 4000);
        b.accrue(t(0.0));
        assert!(!b.allows_segment());
        b.accrue(t(3.0));
        assert!(!b.allows_segment());
        b.accrue(t(100.0));
        assert_eq!(b.tokens(), 4000.0);
        assert!(b.allows_segment());
        b.debit_segment();
        assert!(!b.allows_segment());
        b.accrue(t(104.0));
        assert!(b.allows_segment());
        assert!(WriteBudget::new(None, 1).allows_segment());
    }

    #[test]
    fn never_read_writes_never_reach_flash() {
        let mut e = Engine::new(cfg()).unwrap();
        for i in 0..20_000 {
            e.set("a", key(&format!("k{i}")), vec![0; 200], t(i as f64 * 0.001)).unwrap();
        }
        e.drain(t(100.0)).unwrap();
        let c = e.counters();
        assert_eq!(c.flash_bytes_written, 0);
        assert!(c.dram_evictions > 0);
        assert!(e.dram().free_bytes() >= SEG);
    }

    #[test]
    fn zero_budget_is_dram_only() {
        let mut e = Engine::new(EngineConfig { flash_write_budget: Some(0.0), ..cfg() }).unwrap();
        for i in 0..20_000 {
            let k = key(&format!("k{i}"));
            e.set("a", k.clone(), vec![0; 200], t(i as f64)).unwrap();
            e.get("a", &k, t(i as f64 + 0.5)).unwrap();
        }
        assert_eq!(e.counters().flash_bytes_written, 0);
    }

    #[test]
    fn re_read_objects_are_admitted() {
        let mut e = Engine::new(cfg()).unwrap();
        for i in 0..6000 {
            let k = key(&format!("k{i}"));
            e.set("a", k.clone(), vec![1; 250], t(i as f64)).unwrap();
            e.get("a", &k, t(i as f64 + 0.5)).unwrap();
        }
        let c = e.counters();
        assert!(c.segments_written > 0);
        assert_eq!(c.flash_bytes_written, c.segments_written * SEG);
        // Flushing, not eviction, freed DRAM.
        assert!(c.dram_evictions * 20 < c.sets, "{c:?}");
    }

    #[test]
    fn budget_blocks_second_flush() {
        let rate = SEG as f64 / 10.0;
        let mut e = Engine::new(EngineConfig { flash_write_budget: Some(rate), ..cfg() }).unwrap();
        for i in 0..400 {
            let k = key(&format!("k{i}"));
            e.set("a", k.clone(), vec![1; 250], t(0.0)).unwrap();
            e.get("a", &k, t(0.1)).unwrap();
        }
        assert_eq!(e.flush_now(t(0.2)).unwrap(), 0);
        assert!(e.flush_now(t(10.2)).unwrap() > 0);
        assert_eq!(e.flush_now(t(10.3)).unwrap(), 0);
        assert_eq!(e.counters().segments_written, 1);
    }

    #[test]
    fn partial_flush_pads_the_segment() {
        let mut e = Engine::new(cfg()).unwrap();
        e.set("a", key("x"), vec![1; 95], t(0.0)).unwrap();
        e.get("a", &key("x"), t(1.0)).unwrap();
        assert_eq!(e.flush_now(t(1.0)).unwrap(), 1);
        let c = e.counters();
        assert_eq!(c.flash_bytes_written, SEG);
        assert_eq!(c.segment_used_bytes, 101);
    }

    /// Flush `n` read-once objects named `{tag}{i}` as one segment each call.
    fn fill_segment(e: &mut Engine, tag: &str, n: usize, at: f64) {
        for i in 0..n {
            let k = key(&format!("{tag}{i}"));
            e.set("a", k.clone(), vec![3; 200], t(at)).unwrap();
            e.get("a", &k, t(at)).unwrap();
        }
        e.flush_now(t(at)).unwrap();
    }

    #[test]
    fn reclaim_all_ghosts_drops_everything() {
        let mut e = Engine::new(cfg()).unwrap();
        fill_segment(&mut e, "g", 100, 0.0);
        for slot in 0..e.index.slot_count() {
            e.index.mark_ghost(slot);
        }
        let out = e.reclaim_oldest(t(1.0)).unwrap();
        assert_eq!(out, ReclaimOutcome { reinserted: 0, dropped: 100 });
        assert_eq!(e.get("a", &key("g1"), t(2.0)).unwrap().kind, HitKind::Miss);
    }

    #[test]
    fn reclaim_reinserts_hot_and_drops_unreachable() {
        let mut e = Engine::new(cfg()).unwrap();
        fill_segment(&mut e, "h", 100, 0.0);
        e.delete("a", &key("h0"), t(0.5)).unwrap();
        e.set("a", key("h1"), b"fresh".to_vec(), t(0.5)).unwrap();
        let out = e.reclaim_oldest(t(1.0)).unwrap();
        assert_eq!(out, ReclaimOutcome { reinserted: 98, dropped: 2 });
        let c = e.counters();
        assert_eq!(c.reclaim_scanned, c.reclaim_reinserted + c.reclaim_dropped);
        assert_eq!(e.get("a", &key("h5"), t(2.0)).unwrap().kind, HitKind::Dram);
        assert_eq!(e.get("a", &key("h1"), t(2.0)).unwrap().value.unwrap(), b"fresh");
        assert_eq!(e.get("a", &key("h0"), t(2.0)).unwrap().kind, HitKind::Miss);
        assert_eq!(e.index().live_entries(), 0);
        // Credited one read at re-admission, plus the get above.
        assert_eq!(e.dram().get(&key("h5")).unwrap().read_count, 2);
    }

    #[test]
    fn ghost_round_marks_down_to_threshold() {
        // Flash full of clock-0 objects of mixed sizes, DRAM full of unread
        // objects: flash beyond the hot fraction ends up ghost.
        let mut e = Engine::new(cfg()).unwrap();
        let mut i = 0u64;
        while e.counters().segments_written < 8 {
            let k = key(&format!("{i:06}"));
            let len = (i * 7919 % 1000 + 1) as usize;
            e.set("a", k.clone(), vec![3; len], t(1.0)).unwrap();
            e.get("a", &k, t(1.0)).unwrap();
            i += 1;
        }
        assert_eq!(e.counters().segments_erased, 0);
        while e.dram.evict_one().is_some() {}
        let mut i = 0;
        while e.dram.used_bytes() + 300 < e.cfg.dram_usable() {
            e.set("a", key(&format!("c{i:05}")), vec![0; 200], t(10.0)).unwrap();
            i += 1;
        }
        for slot in 0..e.index.slot_count() {
            e.index.unmark_ghost(slot);
            while e.index.clock_decrement(slot) > 0 {}
        }
        let flash_bytes = e.index.hot_bytes();
        let live = e.index.live_entries() as f64;
        let target = e.cfg.hot_data_threshold() - e.dram.used_bytes() as f64;
        let marked = e.ghost_round() as f64;
        let hot = e.index.hot_bytes();
        let utilization = e.counters().segment_used_bytes as f64 / e.counters().flash_bytes_written as f64;
        assert!(utilization > 0.85, "{utilization}");
        // Stops as soon as hot bytes are under the threshold.
        assert!(hot <= target && hot + 1005.0 > target, "{hot} {target}");
        let expected_share = 1.0 - target / flash_bytes;
        let share = marked / live;
        assert!((share - expected_share).abs() < 0.02, "{share} vs {expected_share}");
        // At 100% utilization this is the 30% complement of hot_fraction.
        let full_flash_share = 1.0 - e.cfg.hot_fraction / utilization;
        assert!((share - full_flash_share).abs() < 0.03, "{share} vs {full_flash_share}");
        assert_eq!(e.ghost_round(), 0);
    }
}
