//! DRAM index for flash-resident objects.
//!
//! A chain-free multiple-choice hash table of packed 32-bit entries. Keys are
//! not stored: an entry names the segment and the placement hash function,
//! the record itself carries the key, and a per-segment bloom filter avoids
//! most useless flash reads.
//!
//! Entries whose segment has been erased are detected through the live
//! segment window and treated as empty; no sweep is needed on erase.

use std::collections::VecDeque;

use serde::Serialize;

use crate::bloom::{BloomFilter, BloomHash};
use crate::builder::placement_offset;
use crate::device::{FlashDevice, SegmentSeq};
use crate::error::Result;
use crate::model::{HashFamily, RecordHeader, RECORD_HEADER_LEN};

/// Packed index entry:
///
/// ```text
///  31     30     29..28   27..24       23..0
/// valid  ghost   clock   hash fn id   segment seq (low 24 bits)
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct FlashEntry(u32);

impl FlashEntry {
    pub const INVALID: FlashEntry = FlashEntry(0);

    const VALID: u32 = 1 << 31;
    const GHOST: u32 = 1 << 30;
    const CLOCK_SHIFT: u32 = 28;
    const FN_SHIFT: u32 = 24;
    const SEQ_MASK: u32 = (1 << 24) - 1;

    pub fn new(seq24: u32, hash_fn_id: u8, clock: u8, ghost: bool) -> Self {
        debug_assert!(seq24 <= Self::SEQ_MASK && hash_fn_id < 16 && clock < 4);
        FlashEntry(
            Self::VALID
                | if ghost { Self::GHOST } else { 0 }
                | ((clock as u32 & 0b11) << Self::CLOCK_SHIFT)
                | ((hash_fn_id as u32 & 0xF) << Self::FN_SHIFT)
                | (seq24 & Self::SEQ_MASK),
        )
    }

    pub fn from_bits(bits: u32) -> Self {
        FlashEntry(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn is_valid(self) -> bool {
        self.0 & Self::VALID != 0
    }

    pub fn is_ghost(self) -> bool {
        self.0 & Self::GHOST != 0
    }

    pub fn clock(self) -> u8 {
        ((self.0 >> Self::CLOCK_SHIFT) & 0b11) as u8
    }

    pub fn hash_fn_id(self) -> u8 {
        ((self.0 >> Self::FN_SHIFT) & 0xF) as u8
    }

    pub fn seq24(self) -> u32 {
        self.0 & Self::SEQ_MASK
    }

    pub fn with_clock(self, clock: u8) -> Self {
        FlashEntry((self.0 & !(0b11 << Self::CLOCK_SHIFT)) | ((clock as u32 & 0b11) << Self::CLOCK_SHIFT))
    }

    pub fn with_ghost(self, ghost: bool) -> Self {
        if ghost {
            FlashEntry(self.0 | Self::GHOST)
        } else {
            FlashEntry(self.0 & !Self::GHOST)
        }
    }
}

/// In-DRAM bookkeeping for one live segment.
#[derive(Debug)]
struct SegmentMeta {
    seq: SegmentSeq,
    bloom: BloomFilter,
    placed: u64,
    placed_bytes: u64,
    live_entries: u64,
    hot_entries: u64,
    /// Keys whose record here was invalidated while other keys' entries
    /// could still reach it.
    dead_keys: Vec<Box<[u8]>>,
}

impl SegmentMeta {
    fn is_dead(&self, key: &[u8]) -> bool {
        self.dead_keys.iter().any(|k| &k[..] == key)
    }

    fn avg_object_bytes(&self) -> f64 {
        if self.placed == 0 {
            0.0
        } else {
            self.placed_bytes as f64 / self.placed as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IndexStats {
    pub lookups: u64,
    pub flash_reads: u64,
    pub hits: u64,
    pub inserts: u64,
    pub displaced: u64,
    /// Invalidations resolved by a per-segment dead-key mark because other
    /// keys' entries aliased the record (same segment and placement function
    /// in the key's probe set).
    pub tombstones: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted { slot: usize },
    /// All probe slots held live entries; the occupant of the last probed
    /// slot was overwritten.
    Displaced { slot: usize, victim: FlashEntry },
}

impl InsertOutcome {
    pub fn slot(&self) -> usize {
        match *self {
            InsertOutcome::Inserted { slot } | InsertOutcome::Displaced { slot, .. } => slot,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlashHit {
    pub value: Vec<u8>,
    pub seq: SegmentSeq,
    pub slot: usize,
    pub entry: FlashEntry,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lookup {
    pub hit: Option<FlashHit>,
    pub flash_reads: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Invalidation {
    /// The key had a reachable flash record.
    pub found: bool,
    /// Index entries cleared (0 when the record was tombstoned instead).
    pub cleared: u32,
    pub tombstoned: bool,
    pub flash_reads: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Footprint {
    pub table_bytes: u64,
    pub bloom_bytes: u64,
    pub live_objects: u64,
    /// `(table_bytes + bloom_bytes) / live_objects`, 0 when empty.
    pub bytes_per_live_object: f64,
    pub table_bytes_per_live_object: f64,
    pub bloom_bits_per_live_object: f64,
}

#[derive(Debug)]
pub struct IndexTable {
    hashes: HashFamily,
    slots: Vec<FlashEntry>,
    mask: u64,
    segment_size: usize,
    probe_read_size: usize,
    max_clock: u8,
    segments: VecDeque<SegmentMeta>,
    stats: IndexStats,
}

impl IndexTable {
    pub fn new(
        hashes: HashFamily,
        slot_count: u64,
        segment_size: usize,
        probe_read_size: usize,
        clock_bits: u8,
    ) -> Self {
        assert!(slot_count.is_power_of_two(), "slot count must be a power of two");
        IndexTable {
            hashes,
            slots: vec![FlashEntry::INVALID; slot_count as usize],
            mask: slot_count - 1,
            segment_size,
            probe_read_size: probe_read_size.max(RECORD_HEADER_LEN),
            max_clock: (1 << clock_bits) - 1,
            segments: VecDeque::new(),
            stats: IndexStats::default(),
        }
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn stats(&self) -> IndexStats {
        self.stats
    }

    pub fn entry(&self, slot: usize) -> FlashEntry {
        self.slots[slot]
    }

    #[inline]
    fn probe(&self, i: usize, key: &[u8]) -> usize {
        (self.hashes.hash_unchecked(i, key) & self.mask) as usize
    }

    /// The `K` table slots `key` may occupy, in probe order.
    pub fn probe_slots(&self, key: &[u8]) -> impl Iterator<Item = usize> + '_ {
        let key = key.to_vec();
        (0..self.hashes.k()).map(move |i| self.probe(i, &key))
    }

    /// Position of the live segment whose low 24 bits are `seq24`.
    fn resolve(&self, seq24: u32) -> Option<usize> {
        let newest = self.segments.back()?.seq;
        let oldest = self.segments.front()?.seq;
        let back = (newest.low24().wrapping_sub(seq24) as u64) & SegmentSeq::MASK_24;
        let seq = newest.0.checked_sub(back)?;
        (seq >= oldest.0).then(|| (seq - oldest.0) as usize)
    }

    fn segment_of(&self, entry: FlashEntry) -> Option<usize> {
        if entry.is_valid() {
            self.resolve(entry.seq24())
        } else {
            None
        }
    }

    /// Valid and pointing at a live segment.
    pub fn is_live(&self, entry: FlashEntry) -> bool {
        self.segment_of(entry).is_some()
    }

    pub fn seq_of(&self, entry: FlashEntry) -> Option<SegmentSeq> {
        self.segment_of(entry).map(|i| self.segments[i].seq)
    }

    pub fn live_segments(&self) -> usize {
        self.segments.len()
    }

    /// Start tracking a freshly written segment. Sequence numbers must be
    /// registered in order without gaps.
    pub fn register_segment(&mut self, seq: SegmentSeq, bloom: BloomFilter, placed: u64, placed_bytes: u64) {
        if let Some(back) = self.segments.back() {
            assert_eq!(back.seq.0 + 1, seq.0, "segments must be registered in order");
        }
        self.segments.push_back(SegmentMeta {
            seq,
            bloom,
            placed,
            placed_bytes,
            live_entries: 0,
            hot_entries: 0,
            dead_keys: Vec::new(),
        });
    }

    /// Forget the oldest segment; every entry pointing at it becomes dead.
    pub fn drop_oldest_segment(&mut self) -> Option<SegmentSeq> {
        self.segments.pop_front().map(|m| m.seq)
    }

    pub fn oldest_segment(&self) -> Option<SegmentSeq> {
        self.segments.front().map(|m| m.seq)
    }

    pub fn segment_bloom_contains(&self, seq: SegmentSeq, key: &[u8]) -> bool {
        self.segments
            .iter()
            .find(|m| m.seq == seq)
            .is_some_and(|m| m.bloom.contains(key))
    }

    fn adjust_counts(&mut self, entry: FlashEntry, delta: i64) {
        if let Some(i) = self.segment_of(entry) {
            let m = &mut self.segments[i];
            m.live_entries = (m.live_entries as i64 + delta) as u64;
            if !entry.is_ghost() {
                m.hot_entries = (m.hot_entries as i64 + delta) as u64;
            }
        }
    }

    fn store(&mut self, slot: usize, entry: FlashEntry) {
        let old = self.slots[slot];
        self.adjust_counts(old, -1);
        self.slots[slot] = entry;
        self.adjust_counts(entry, 1);
    }

    /// Insert an entry for `key`, placed in segment `seq` by function
    /// `hash_fn_id`. The segment must already be registered.
    pub fn insert(&mut self, key: &[u8], seq: SegmentSeq, hash_fn_id: u8, clock: u8) -> InsertOutcome {
        debug_assert!(self.resolve(seq.low24()).is_some(), "segment not registered");
        let entry = FlashEntry::new(seq.low24(), hash_fn_id, clock.min(self.max_clock), false);
        self.stats.inserts += 1;
        let k = self.hashes.k();
        for i in 0..k {
            let slot = self.probe(i, key);
            if !self.is_live(self.slots[slot]) {
                self.store(slot, entry);
                return InsertOutcome::Inserted { slot };
            }
        }
        let slot = self.probe(k - 1, key);
        let victim = self.slots[slot];
        self.store(slot, entry);
        self.stats.displaced += 1;
        InsertOutcome::Displaced { slot, victim }
    }

    /// Read the record `entry` points at for `key`, returning its value when
    /// the stored key matches. Adds the number of device reads to `reads`.
    fn probe_record(
        &self,
        key: &[u8],
        seq: SegmentSeq,
        entry: FlashEntry,
        device: &dyn FlashDevice,
        reads: &mut u32,
    ) -> Result<Option<Vec<u8>>> {
        let offset = placement_offset(&self.hashes, entry.hash_fn_id() as usize, key, self.segment_size);
        let first_len = self.probe_read_size.min(self.segment_size - offset);
        let first = device.read(seq, offset, first_len)?;
        *reads += 1;
        let Ok(header) = RecordHeader::parse(&first) else {
            return Ok(None);
        };
        if header.key_len != key.len() || offset + header.total_len() > self.segment_size {
            return Ok(None);
        }
        let key_end = RECORD_HEADER_LEN + key.len();
        if key_end <= first.len() && &first[RECORD_HEADER_LEN..key_end] != key {
            return Ok(None);
        }
        let total = header.total_len();
        let record = if total <= first.len() {
            first
        } else {
            let mut full = first;
            let rest = device.read(seq, offset + full.len(), total - full.len())?;
            *reads += 1;
            full.extend_from_slice(&rest);
            full
        };
        if &record[RECORD_HEADER_LEN..key_end] != key {
            return Ok(None);
        }
        Ok(Some(record[key_end..total].to_vec()))
    }

    fn lookup_inner(&self, key: &[u8], device: &dyn FlashDevice) -> Result<Lookup> {
        let bh = BloomHash::of(key);
        let mut reads = 0;
        for i in 0..self.hashes.k() {
            let slot = self.probe(i, key);
            let entry = self.slots[slot];
            let Some(pos) = self.segment_of(entry) else {
                continue;
            };
            let meta = &self.segments[pos];
            if !meta.bloom.contains_hash(bh) || meta.is_dead(key) {
                continue;
            }
            if let Some(value) = self.probe_record(key, meta.seq, entry, device, &mut reads)? {
                return Ok(Lookup {
                    hit: Some(FlashHit {
                        value,
                        seq: meta.seq,
                        slot,
                        entry,
                    }),
                    flash_reads: reads,
                });
            }
        }
        Ok(Lookup {
            hit: None,
            flash_reads: reads,
        })
    }

    pub fn lookup(&mut self, key: &[u8], device: &dyn FlashDevice) -> Result<Lookup> {
        let res = self.lookup_inner(key, device)?;
        self.stats.lookups += 1;
        self.stats.flash_reads += res.flash_reads as u64;
        if res.hit.is_some() {
            self.stats.hits += 1;
        }
        Ok(res)
    }

    /// Lookup without touching statistics.
    pub fn peek(&self, key: &[u8], device: &dyn FlashDevice) -> Result<Lookup> {
        self.lookup_inner(key, device)
    }

    /// Make `key` unreachable on flash. The entry reaching its record is
    /// cleared; if several entries in the probe set alias the record, the
    /// key is marked dead in that segment instead. Absent keys are a no-op.
    pub fn invalidate(&mut self, key: &[u8], device: &dyn FlashDevice) -> Result<Invalidation> {
        let found = self.lookup_inner(key, device)?;
        let mut out = Invalidation {
            flash_reads: found.flash_reads,
            ..Default::default()
        };
        self.stats.flash_reads += found.flash_reads as u64;
        let Some(hit) = found.hit else {
            return Ok(out);
        };
        out.found = true;
        let target = (hit.entry.seq24(), hit.entry.hash_fn_id());
        let matching: Vec<usize> = (0..self.hashes.k())
            .map(|i| self.probe(i, key))
            .filter(|&slot| {
                let e = self.slots[slot];
                self.is_live(e) && (e.seq24(), e.hash_fn_id()) == target
            })
            .collect();
        if let [slot] = matching[..] {
            self.store(slot, FlashEntry::INVALID);
            out.cleared = 1;
        } else if let Some(pos) = self.segment_of(hit.entry) {
            // The entries cannot be told apart without their keys; keep them
            // and hide this key's record instead.
            self.segments[pos].dead_keys.push(key.into());
            out.tombstoned = true;
            self.stats.tombstones += 1;
        }
        Ok(out)
    }

    /// Find the entry through which the record of `key` at `offset` in
    /// `seq` is reachable, without reading flash.
    pub fn resolve_record(&self, key: &[u8], seq: SegmentSeq, offset: usize) -> Option<(usize, FlashEntry)> {
        if self.segments.iter().any(|m| m.seq == seq && m.is_dead(key)) {
            return None;
        }
        (0..self.hashes.k()).map(|i| self.probe(i, key)).find_map(|slot| {
            let e = self.slots[slot];
            (self.seq_of(e) == Some(seq)
                && placement_offset(&self.hashes, e.hash_fn_id() as usize, key, self.segment_size) == offset)
                .then_some((slot, e))
        })
    }

    pub fn invalidate_slot(&mut self, slot: usize) {
        if self.slots[slot].is_valid() {
            self.store(slot, FlashEntry::INVALID);
        }
    }

    /// Returns whether the entry was live and not already a ghost.
    pub fn mark_ghost(&mut self, slot: usize) -> bool {
        let e = self.slots[slot];
        if !self.is_live(e) || e.is_ghost() {
            return false;
        }
        self.store(slot, e.with_ghost(true));
        true
    }

    /// Returns whether a live ghost was revived.
    pub fn unmark_ghost(&mut self, slot: usize) -> bool {
        let e = self.slots[slot];
        if !self.is_live(e) || !e.is_ghost() {
            return false;
        }
        self.store(slot, e.with_ghost(false));
        true
    }

    /// Set the CLOCK bits to their maximum (an access).
    pub fn clock_touch(&mut self, slot: usize) {
        let e = self.slots[slot];
        if e.is_valid() {
            self.slots[slot] = e.with_clock(self.max_clock);
        }
    }

    /// Decrement the CLOCK bits, flooring at zero. Returns the new value.
    pub fn clock_decrement(&mut self, slot: usize) -> u8 {
        let e = self.slots[slot];
        let c = e.clock().saturating_sub(1);
        if e.is_valid() {
            self.slots[slot] = e.with_clock(c);
        }
        c
    }

    /// Approximate bytes held by live non-ghost flash objects, using each
    /// segment's mean object size.
    pub fn hot_bytes(&self) -> f64 {
        self.segments
            .iter()
            .map(|m| m.hot_entries as f64 * m.avg_object_bytes())
            .sum()
    }

    /// Mean object size of the segment `entry` points at.
    pub fn entry_object_bytes(&self, entry: FlashEntry) -> f64 {
        self.segment_of(entry)
            .map_or(0.0, |i| self.segments[i].avg_object_bytes())
    }

    pub fn live_entries(&self) -> u64 {
        self.segments.iter().map(|m| m.live_entries).sum()
    }

    pub fn hot_entries(&self) -> u64 {
        self.segments.iter().map(|m| m.hot_entries).sum()
    }

    pub fn ghost_entries(&self) -> u64 {
        self.live_entries() - self.hot_entries()
    }

    pub fn bloom_bytes(&self) -> u64 {
        self.segments.iter().map(|m| m.bloom.size_bytes()).sum()
    }

    pub fn table_bytes(&self) -> u64 {
        4 * self.slots.len() as u64
    }

    pub fn memory_footprint(&self) -> Footprint {
        let table_bytes = self.table_bytes();
        let bloom_bytes = self.bloom_bytes();
        let live = self.live_entries();
        let per = |bytes: f64| if live == 0 { 0.0 } else { bytes / live as f64 };
        Footprint {
            table_bytes,
            bloom_bytes,
            live_objects: live,
            bytes_per_live_object: per((table_bytes + bloom_bytes) as f64),
            table_bytes_per_live_object: per(table_bytes as f64),
            bloom_bits_per_live_object: per(bloom_bytes as f64 * 8.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::SegmentImage;
    use crate::device::MemDevice;
    use crate::model::Key;

    const SEG: usize = 1 << 16;

    fn key(s: &str) -> Key {
        Key::try_from(s).unwrap()
    }

    struct Rig {
        index: IndexTable,
        dev: MemDevice,
        hashes: HashFamily,
    }

    impl Rig {
        fn new(slots: u64) -> Self {
            let hashes = HashFamily::new(16).unwrap();
            Rig {
                index: IndexTable::new(hashes, slots, SEG, 4096, 2),
                dev: MemDevice::new(SEG, 8).unwrap(),
                hashes,
            }
        }

        /// Write one segment with `objs` and index every placed object.
        fn flush(&mut self, objs: &[(Key, Vec<u8>)]) -> (SegmentSeq, Vec<InsertOutcome>) {
            let mut img = SegmentImage::new(SEG);
            for (k, v) in objs {
                img.try_place(&self.hashes, k, v).unwrap().expect("fits");
            }
            let sealed = img.seal(0.01);
            let seq = self.dev.append_segment(&sealed.bytes).unwrap();
            self.index.register_segment(
                seq,
                sealed.bloom,
                sealed.placements.len() as u64,
                sealed.used_bytes as u64,
            );
            let outs = sealed
                .placements
                .iter()
                .map(|p| self.index.insert(p.key.as_bytes(), seq, p.hash_fn_id, 3))
                .collect();
            (seq, outs)
        }
    }

    #[test]
    fn entry_packing_round_trips_over_field_domains() {
        for ghost in [false, true] {
            for clock in 0..4u8 {
                for f in 0..16u8 {
                    for seq in [0u32, 1, 0x7F_FFFF, 0xFF_FFFF, 0x12_3456] {
                        let e = FlashEntry::new(seq, f, clock, ghost);
                        assert!(e.is_valid());
                        assert_eq!(
                            (e.seq24(), e.hash_fn_id(), e.clock(), e.is_ghost()),
                            (seq, f, clock, ghost)
                        );
                        assert_eq!(FlashEntry::from_bits(e.bits()), e);
                    }
                }
            }
        }
        assert_eq!(FlashEntry::INVALID.bits(), 0);
        assert_eq!(std::mem::size_of::<FlashEntry>(), 4);
    }

    #[test]
    fn exhaustive_bit_pattern_round_trip() {
        // Every valid pattern: repack from decoded fields and compare.
        for bits in (1u32 << 31)..=u32::MAX {
            let e = FlashEntry::from_bits(bits);
            let again = FlashEntry::new(e.seq24(), e.hash_fn_id(), e.clock(), e.is_ghost());
            if again.bits() != bits {
                panic!("pattern {bits:#x} did not round-trip");
            }
            if bits == u32::MAX {
                break;
            }
        }
    }

    #[test]
    fn clock_saturates_and_floors() {
        let mut r = Rig::new(1 << 10);
        let (_, outs) = r.flush(&[(key("a"), b"1".to_vec())]);
        let slot = outs[0].slot();
        r.index.clock_touch(slot);
        assert_eq!(r.index.entry(slot).clock(), 3);
        for _ in 0..5 {
            r.index.clock_decrement(slot);
        }
        assert_eq!(r.index.entry(slot).clock(), 0);
        assert_eq!(r.index.clock_decrement(slot), 0);
    }

    #[test]
    fn empty_table_lands_at_first_probe_then_second() {
        let mut r = Rig::new(1 << 12);
        let (_, outs) = r.flush(&[(key("x"), b"v".to_vec())]);
        let first = r.index.probe_slots(b"x").next().unwrap();
        assert_eq!(outs[0], InsertOutcome::Inserted { slot: first });
        // A second insert of the same key finds probe 0 occupied.
        let seq = r.index.oldest_segment().unwrap();
        let second = r.index.probe_slots(b"x").nth(1).unwrap();
        let out = r.index.insert(b"x", seq, 0, 3);
        if second != first {
            assert_eq!(out, InsertOutcome::Inserted { slot: second });
        }
    }

    #[test]
    fn full_probe_set_displaces_last_probe_occupant() {
        // Tiny table: brute-force keys until every probe slot of the target
        // is occupied by other live entries.
        let mut r = Rig::new(16);
        let target = key("target");
        let target_slots: Vec<usize> = r.index.probe_slots(b"target").collect();
        let mut fillers = Vec::new();
        let mut covered = std::collections::HashSet::new();
        for i in 0.. {
            let k = key(&format!("filler{i}"));
            let s = r.index.probe_slots(k.as_bytes()).next().unwrap();
            if target_slots.contains(&s) && covered.insert(s) {
                fillers.push((k, vec![1u8]));
            }
            if covered.len() == target_slots.iter().collect::<std::collections::HashSet<_>>().len() {
                break;
            }
        }
        let (seq, outs) = r.flush(&fillers);
        assert!(outs.iter().all(|o| matches!(o, InsertOutcome::Inserted { .. })));
        let before = r.index.live_entries();
        let out = r.index.insert(target.as_bytes(), seq, 0, 3);
        let last = *target_slots.last().unwrap();
        assert!(matches!(out, InsertOutcome::Displaced { slot, .. } if slot == last));
        assert_eq!(r.index.stats().displaced, 1);
        assert_eq!(r.index.live_entries(), before);
    }

    #[test]
    fn lookup_hit_costs_one_read_and_absent_costs_none() {
        let mut r = Rig::new(1 << 12);
        r.flush(&[(key("present"), b"value".to_vec())]);
        let hit = r.index.lookup(b"present", &r.dev).unwrap();
        assert_eq!(hit.flash_reads, 1);
        assert_eq!(hit.hit.unwrap().value, b"value");
        let before = r.dev.stats().flash_reads;
        let miss = r.index.lookup(b"never-inserted", &r.dev).unwrap();
        assert!(miss.hit.is_none());
        assert_eq!(miss.flash_reads, 0);
        assert_eq!(r.dev.stats().flash_reads, before);
    }

    #[test]
    fn large_record_takes_a_second_read() {
        let mut r = Rig::new(1 << 12);
        r.flush(&[(key("big"), vec![7u8; 6000])]);
        let hit = r.index.lookup(b"big", &r.dev).unwrap();
        assert_eq!(hit.flash_reads, 2);
        assert_eq!(hit.hit.unwrap().value, vec![7u8; 6000]);
    }

    #[test]
    fn invalidate_then_lookup_misses_and_is_idempotent() {
        let mut r = Rig::new(1 << 12);
        r.flush(&[(key("a"), b"1".to_vec()), (key("b"), b"2".to_vec())]);
        let inv = r.index.invalidate(b"a", &r.dev).unwrap();
        assert_eq!(inv.cleared, 1);
        assert!(r.index.lookup(b"a", &r.dev).unwrap().hit.is_none());
        assert_eq!(r.index.invalidate(b"a", &r.dev).unwrap().cleared, 0);
        assert!(r.index.lookup(b"b", &r.dev).unwrap().hit.is_some());
    }

    #[test]
    fn aliased_invalidation_hides_only_that_key() {
        let mut r = Rig::new(1 << 6);
        let objs: Vec<_> = (0..40).map(|i| (key(&format!("a{i}")), vec![i as u8; 8])).collect();
        r.flush(&objs);
        let reachable: Vec<_> = objs
            .iter()
            .filter(|(k, _)| r.index.peek(k.as_bytes(), &r.dev).unwrap().hit.is_some())
            .cloned()
            .collect();
        let mut tombstoned = 0;
        for (i, (k, _)) in reachable.iter().enumerate() {
            let inv = r.index.invalidate(k.as_bytes(), &r.dev).unwrap();
            assert!(inv.found);
            assert_eq!(inv.cleared + inv.tombstoned as u32, 1);
            tombstoned += inv.tombstoned as usize;
            assert!(r.index.peek(k.as_bytes(), &r.dev).unwrap().hit.is_none());
            for (other, v) in &reachable[i + 1..] {
                let hit = r.index.peek(other.as_bytes(), &r.dev).unwrap().hit;
                assert_eq!(hit.map(|h| h.value).as_ref(), Some(v), "{other:?} lost after {k:?}");
            }
        }
        assert!(tombstoned > 0, "no aliasing in a crowded 64-slot table");
        assert_eq!(r.index.stats().tombstones, tombstoned as u64);
    }

    #[test]
    fn erased_segment_entries_are_dead_without_reads() {
        let mut r = Rig::new(1 << 12);
        r.flush(&[(key("old"), b"1".to_vec())]);
        r.index.drop_oldest_segment();
        r.dev.erase_oldest().unwrap();
        let before = r.dev.stats().flash_reads;
        assert!(r.index.lookup(b"old", &r.dev).unwrap().hit.is_none());
        assert_eq!(r.dev.stats().flash_reads, before);
        assert_eq!(r.index.live_entries(), 0);
        // The zombie slot is reused by the next insert.
        let (_, outs) = r.flush(&[(key("old"), b"2".to_vec())]);
        assert!(matches!(outs[0], InsertOutcome::Inserted { .. }));
    }

    #[test]
    fn ghost_marking_tracks_hot_counts() {
        let mut r = Rig::new(1 << 12);
        let (_, outs) = r.flush(&[(key("a"), vec![0u8; 94]), (key("b"), vec![0u8; 94])]);
        assert_eq!(r.index.hot_bytes(), 200.0);
        assert!(r.index.mark_ghost(outs[0].slot()));
        assert!(!r.index.mark_ghost(outs[0].slot()));
        assert_eq!(r.index.hot_bytes(), 100.0);
        assert_eq!(r.index.ghost_entries(), 1);
        assert!(r.index.unmark_ghost(outs[0].slot()));
        assert_eq!(r.index.hot_bytes(), 200.0);
    }

    #[test]
    fn footprint_accounting() {
        let r = Rig::new(1 << 20);
        let fp = r.index.memory_footprint();
        assert_eq!(fp.table_bytes, 4 << 20);
        assert_eq!(fp.bloom_bytes, 0);
        assert_eq!(fp.bytes_per_live_object, 0.0);
    }

    #[test]
    fn footprint_at_eighty_percent_occupancy() {
        // 4 / 0.8 table bytes + 10 / 8 bloom bytes = 6.25 bytes per object.
        let mut r = Rig::new(1 << 12);
        let objs: Vec<_> = (0..3277).map(|i| (key(&format!("o{i}")), Vec::new())).collect();
        for chunk in objs.chunks(470) {
            r.flush(chunk);
        }
        let fp = r.index.memory_footprint();
        let occupancy = fp.live_objects as f64 / 4096.0;
        assert!((occupancy - 0.8).abs() < 0.01, "{occupancy}");
        assert!((fp.table_bytes_per_live_object - 4.0 / occupancy).abs() < 1e-9);
        assert!((fp.bloom_bits_per_live_object - 10.0).abs() < 0.1, "{fp:?}");
        assert!((fp.bytes_per_live_object - 6.25).abs() < 0.1, "{fp:?}");
    }

    #[test]
    fn twenty_four_bit_sequence_wraparound() {
        let hashes = HashFamily::new(4).unwrap();
        let mut idx = IndexTable::new(hashes, 1 << 8, SEG, 4096, 2);
        let base = (1u64 << 24) - 2;
        for s in base..base + 4 {
            idx.register_segment(SegmentSeq(s), BloomFilter::with_capacity(1, 0.01), 1, 10);
        }
        idx.drop_oldest_segment();
        let e_old = FlashEntry::new(SegmentSeq(base).low24(), 0, 0, false);
        let e_new = FlashEntry::new(SegmentSeq(base + 3).low24(), 0, 0, false);
        assert!(!idx.is_live(e_old));
        assert_eq!(idx.seq_of(e_new), Some(SegmentSeq(base + 3)));
    }
}
