//! DRAM object tier: the full key -> object map, CLOCK bits for eviction
//! and the per-object read history the flashiness features come from.

use std::collections::HashMap;

use serde::Serialize;

use crate::classifier::FeatureVector;
use crate::error::{Error, Result};
use crate::model::{record_len, Key, Timestamp};

pub type TenantId = u16;

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMeta {
    pub key: Key,
    pub value: Vec<u8>,
    pub tenant: TenantId,
    pub clock: u8,
    pub write_time: Timestamp,
    pub read_count: u32,
    pub last_access: Timestamp,
    /// Seconds between the last two accesses (write counts as an access).
    pub prev_gap: f64,
    pub max_gap: f64,
    pub gap_sum: f64,
    pub first_read_delay: Option<f64>,
    /// Re-inserted from flash when its segment was reclaimed.
    pub ghost_origin: bool,
}

impl ObjectMeta {
    fn fresh(key: Key, value: Vec<u8>, tenant: TenantId, clock: u8, now: Timestamp) -> Self {
        ObjectMeta {
            key,
            value,
            tenant,
            clock,
            write_time: now,
            read_count: 0,
            last_access: now,
            prev_gap: 0.0,
            max_gap: 0.0,
            gap_sum: 0.0,
            first_read_delay: None,
            ghost_origin: false,
        }
    }

    pub fn size(&self) -> u64 {
        record_len(self.key.len(), self.value.len()) as u64
    }

    fn record_read(&mut self, now: Timestamp) {
        let gap = now.secs_since(self.last_access);
        self.read_count += 1;
        self.gap_sum += gap;
        self.prev_gap = gap;
        self.max_gap = self.max_gap.max(gap);
        if self.first_read_delay.is_none() {
            self.first_read_delay = Some(now.secs_since(self.write_time));
        }
        self.last_access = now;
    }

    /// `[reads, mean gap, last gap, max gap, first-read delay]`; the write
    /// is the origin of the first gap. `None` until the first read.
    pub fn features(&self) -> Option<FeatureVector> {
        if self.read_count == 0 {
            return None;
        }
        Some(FeatureVector([
            self.read_count as f64,
            self.gap_sum / self.read_count as f64,
            self.prev_gap,
            self.max_gap,
            self.first_read_delay.unwrap_or(0.0),
        ]))
    }
}

/// Free-standing form of [`ObjectMeta::features`].
pub fn extract_features(meta: &ObjectMeta) -> Option<FeatureVector> {
    meta.features()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DramStats {
    pub used_bytes: u64,
    pub free_bytes: u64,
    pub object_count: u64,
    pub evicted_count: u64,
    pub evicted_bytes: u64,
    pub bytes_written_by_clients: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PutOutcome {
    Stored,
    /// An older DRAM version was replaced.
    Replaced,
}

/// CLOCK-managed object store. Objects live in a slot array the eviction
/// hand walks round-robin; the map resolves keys to slots.
#[derive(Debug)]
pub struct DramStore {
    capacity: u64,
    used: u64,
    max_clock: u8,
    slots: Vec<Option<ObjectMeta>>,
    free_slots: Vec<usize>,
    map: HashMap<Key, usize>,
    hand: usize,
    evicted_count: u64,
    evicted_bytes: u64,
    client_bytes: u64,
}

impl DramStore {
    pub fn new(capacity: u64, clock_bits: u8) -> Self {
        DramStore {
            capacity,
            used: 0,
            max_clock: (1 << clock_bits) - 1,
            slots: Vec::new(),
            free_slots: Vec::new(),
            map: HashMap::new(),
            hand: 0,
            evicted_count: 0,
            evicted_bytes: 0,
            client_bytes: 0,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used_bytes(&self) -> u64 {
        self.used
    }

    pub fn free_bytes(&self) -> u64 {
        self.capacity - self.used
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, key: &Key) -> bool {
        self.map.contains_key(key)
    }

    pub fn get(&self, key: &Key) -> Option<&ObjectMeta> {
        self.map.get(key).and_then(|&i| self.slots[i].as_ref())
    }

    pub fn stats(&self) -> DramStats {
        DramStats {
            used_bytes: self.used,
            free_bytes: self.free_bytes(),
            object_count: self.map.len() as u64,
            evicted_count: self.evicted_count,
            evicted_bytes: self.evicted_bytes,
            bytes_written_by_clients: self.client_bytes,
        }
    }

    fn place(&mut self, meta: ObjectMeta) {
        let key = meta.key.clone();
        let slot = match self.free_slots.pop() {
            Some(i) => {
                self.slots[i] = Some(meta);
                i
            }
            None => {
                self.slots.push(Some(meta));
                self.slots.len() - 1
            }
        };
        self.map.insert(key, slot);
    }

    fn check_room(&self, key: &Key, len: u64) -> Result<()> {
        if len > self.capacity {
            return Err(Error::Oversize {
                len,
                limit: self.capacity,
            });
        }
        let reclaimable = self.get(key).map_or(0, ObjectMeta::size);
        if self.used - reclaimable + len > self.capacity {
            return Err(Error::NoSpace { needed: len });
        }
        Ok(())
    }

    /// Store a client write. The object starts with full CLOCK bits and an
    /// empty read history; an older DRAM version is discarded.
    pub fn put(&mut self, key: Key, value: Vec<u8>, tenant: TenantId, now: Timestamp) -> Result<PutOutcome> {
        let len = record_len(key.len(), value.len()) as u64;
        self.check_room(&key, len)?;
        let outcome = match self.remove(&key) {
            Some(_) => PutOutcome::Replaced,
            None => PutOutcome::Stored,
        };
        self.client_bytes += len;
        self.used += len;
        self.place(ObjectMeta::fresh(key, value, tenant, self.max_clock, now));
        Ok(outcome)
    }

    /// Re-admit an object reclaimed from flash. It keeps its CLOCK bits and
    /// restarts its history credited with one read.
    pub fn insert_reclaimed(
        &mut self,
        key: Key,
        value: Vec<u8>,
        tenant: TenantId,
        clock: u8,
        now: Timestamp,
    ) -> Result<()> {
        let len = record_len(key.len(), value.len()) as u64;
        self.check_room(&key, len)?;
        self.remove(&key);
        let mut meta = ObjectMeta::fresh(key, value, tenant, clock.min(self.max_clock), now);
        meta.read_count = 1;
        meta.first_read_delay = Some(0.0);
        meta.ghost_origin = true;
        self.used += len;
        self.place(meta);
        Ok(())
    }

    /// Record a read: CLOCK bits to max and the history updated.
    pub fn on_read(&mut self, key: &Key, now: Timestamp) -> Option<&ObjectMeta> {
        let &slot = self.map.get(key)?;
        let max_clock = self.max_clock;
        let meta = self.slots[slot].as_mut()?;
        meta.clock = max_clock;
        meta.record_read(now);
        Some(meta)
    }

    pub fn remove(&mut self, key: &Key) -> Option<ObjectMeta> {
        let slot = self.map.remove(key)?;
        let meta = self.slots[slot].take()?;
        self.free_slots.push(slot);
        self.used -= meta.size();
        Some(meta)
    }

    /// Advance the CLOCK hand until an object with zero bits is found,
    /// decrementing the others on the way, and evict it.
    pub fn evict_one(&mut self) -> Option<ObjectMeta> {
        self.evict_one_sparing(|_| false)
    }

    /// CLOCK eviction that passes over objects for which `spare` holds,
    /// leaving their bits untouched. `None` if every object is spared.
    pub fn evict_one_sparing(&mut self, mut spare: impl FnMut(&ObjectMeta) -> bool) -> Option<ObjectMeta> {
        if self.map.is_empty() {
            return None;
        }
        let n = self.slots.len();
        // Each live object needs at most `max_clock` decrements.
        for _ in 0..n * (self.max_clock as usize + 1) + 1 {
            let i = self.hand;
            self.hand = (self.hand + 1) % n;
            let Some(meta) = self.slots[i].as_mut() else {
                continue;
            };
            if spare(meta) {
                continue;
            }
            if meta.clock == 0 {
                let key = meta.key.clone();
                let meta = self.remove(&key).expect("slot is mapped");
                self.evicted_count += 1;
                self.evicted_bytes += meta.size();
                return Some(meta);
            }
            meta.clock -= 1;
        }
        None
    }

    /// Live objects in slot order.
    pub fn iter(&self) -> impl Iterator<Item = &ObjectMeta> {
        self.slots.iter().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(s: &str) -> Key {
        Key::try_from(s).unwrap()
    }

    fn t(secs: f64) -> Timestamp {
        Timestamp::from_secs_f64(secs)
    }

    #[test]
    fn worked_feature_example() {
        let mut s = DramStore::new(1 << 20, 2);
        s.put(key("o"), b"v".to_vec(), 0, t(0.0)).unwrap();
        assert!(s.get(&key("o")).unwrap().features().is_none());
        let f = s.on_read(&key("o"), t(1.0)).unwrap().features().unwrap();
        assert_eq!(f.0, [1.0, 1.0, 1.0, 1.0, 1.0]);
        let f = s.on_read(&key("o"), t(1.5)).unwrap().features().unwrap();
        assert_eq!(f.0, [2.0, 0.75, 0.5, 1.0, 1.0]);
        assert!(s.on_read(&key("missing"), t(2.0)).is_none());
    }

    #[test]
    fn put_then_update() {
        let mut s = DramStore::new(1 << 20, 2);
        assert_eq!(s.put(key("k"), b"old".to_vec(), 0, t(0.0)).unwrap(), PutOutcome::Stored);
        s.on_read(&key("k"), t(1.0));
        assert_eq!(s.put(key("k"), b"new".to_vec(), 0, t(2.0)).unwrap(), PutOutcome::Replaced);
        let m = s.get(&key("k")).unwrap();
        assert_eq!(m.value, b"new");
        assert_eq!(m.read_count, 0);
        assert_eq!(s.used_bytes(), record_len(1, 3) as u64);
        assert_eq!(s.stats().bytes_written_by_clients, 2 * record_len(1, 3) as u64);
        assert_eq!(s.on_read(&key("k"), t(3.0)).unwrap().read_count, 1);
    }

    #[test]
    fn capacity_checks() {
        let mut s = DramStore::new(100, 2);
        assert!(matches!(s.put(key("k"), vec![0; 100], 0, t(0.0)), Err(Error::Oversize { .. })));
        s.put(key("a"), vec![0; 60], 0, t(0.0)).unwrap();
        assert!(matches!(s.put(key("b"), vec![0; 60], 0, t(0.0)), Err(Error::NoSpace { .. })));
        // Replacing the same key only needs the difference.
        s.put(key("a"), vec![0; 90], 0, t(0.0)).unwrap();
    }

    #[test]
    fn eviction_clock_semantics() {
        let mut s = DramStore::new(1 << 20, 2);
        assert!(s.evict_one().is_none());
        s.put(key("a"), vec![], 0, t(0.0)).unwrap();
        s.slots[0].as_mut().unwrap().clock = 2;
        // 2 -> 1 -> 0 -> evicted on the third visit.
        let evicted = s.evict_one().unwrap();
        assert_eq!(evicted.key, key("a"));
        assert_eq!(s.hand, 1 % s.slots.len());

        let mut s = DramStore::new(1 << 20, 2);
        for k in ["a", "b", "c"] {
            s.put(key(k), vec![], 0, t(0.0)).unwrap();
        }
        for m in s.slots.iter_mut().flatten() {
            m.clock = 0;
        }
        s.hand = 1;
        assert_eq!(s.evict_one().unwrap().key, key("b"));
        assert_eq!(s.evict_one().unwrap().key, key("c"));
        assert_eq!(s.stats().evicted_count, 2);
    }

    #[test]
    fn sparing_eviction_skips_without_aging() {
        let mut s = DramStore::new(1 << 20, 2);
        for k in ["a", "b", "c"] {
            s.put(key(k), vec![], 0, t(0.0)).unwrap();
        }
        let spare_a = |m: &ObjectMeta| m.key == key("a");
        // b and c start at max clock; a is never aged or chosen.
        let first = s.evict_one_sparing(spare_a).unwrap();
        assert_ne!(first.key, key("a"));
        s.evict_one_sparing(spare_a).unwrap();
        assert_eq!(s.get(&key("a")).unwrap().clock, 3);
        assert!(s.evict_one_sparing(spare_a).is_none());
        assert_eq!(s.evict_one().unwrap().key, key("a"));
    }

    #[test]
    fn reclaimed_objects_keep_clock_and_carry_one_read() {
        let mut s = DramStore::new(1 << 20, 2);
        s.insert_reclaimed(key("r"), b"x".to_vec(), 3, 1, t(5.0)).unwrap();
        let m = s.get(&key("r")).unwrap();
        assert_eq!((m.clock, m.read_count, m.tenant, m.ghost_origin), (1, 1, 3, true));
        assert!(m.features().is_some());
    }

    /// Brute-force features from the raw access list (write first).
    fn oracle(write: f64, reads: &[f64]) -> [f64; 5] {
        let mut times = vec![write];
        times.extend_from_slice(reads);
        let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        [
            reads.len() as f64,
            gaps.iter().sum::<f64>() / reads.len() as f64,
            *gaps.last().unwrap(),
            gaps.iter().cloned().fold(0.0, f64::max),
            reads[0] - write,
        ]
    }

    proptest! {
        #[test]
        fn features_match_brute_force(write in 0u64..1000, deltas in proptest::collection::vec(0u64..10_000_000, 1..40)) {
            let mut s = DramStore::new(1 << 20, 2);
            let w = Timestamp(write * 1_000_000);
            s.put(key("k"), vec![1], 0, w).unwrap();
            let mut now = w;
            let mut reads = Vec::new();
            for d in deltas {
                now = Timestamp(now.0 + d);
                reads.push(now.as_secs_f64());
                let f = s.on_read(&key("k"), now).unwrap().features().unwrap();
                let o = oracle(w.as_secs_f64(), &reads);
                for (a, b) in f.0.iter().zip(o.iter()) {
                    prop_assert!((a - b).abs() < 1e-6, "{:?} vs {:?}", f.0, o);
                }
            }
        }

        #[test]
        fn byte_accounting_is_exact(ops in proptest::collection::vec((0u8..3, 0u8..20, 0usize..200), 1..200)) {
            let mut s = DramStore::new(4000, 2);
            let mut model: HashMap<Key, usize> = HashMap::new();
            for (op, k, len) in ops {
                let k = key(&format!("k{k}"));
                match op {
                    0 => if s.put(k.clone(), vec![0; len], 0, Timestamp(0)).is_ok() {
                        model.insert(k.clone(), record_len(k.len(), len));
                    },
                    1 => { s.remove(&k); model.remove(&k); }
                    _ => if let Some(m) = s.evict_one() { model.remove(&m.key); },
                }
                prop_assert_eq!(s.used_bytes(), model.values().sum::<usize>() as u64);
                prop_assert_eq!(s.len(), model.len());
                prop_assert_eq!(s.used_bytes() + s.free_bytes(), 4000);
            }
        }
    }
}
