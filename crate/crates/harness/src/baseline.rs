//! Reference policies replayed against the same traces as the engine.
//!
//! Sizes here are serialized record lengths, so byte counters agree with the
//! engine's. Flash writes are charged per whole segment as buffers fill,
//! which keeps device-level effects out of the comparison.

use std::collections::{HashMap, VecDeque};

use hybridcache::engine::HitKind;
use hybridcache::metrics::CounterSet;
use lru::LruCache;

/// Read-count classes of the segmented-LRU approximation.
pub const RIPQ_CLASSES: usize = 8;

/// Common replay surface for baselines. Keys are plain strings; `size` is
/// the record length.
pub trait Baseline {
    fn get(&mut self, key: &str) -> HitKind;
    fn set(&mut self, key: &str, size: u64);
    fn delete(&mut self, key: &str) -> bool;
    fn counters(&self) -> CounterSet;
}

/// LRU keyed by string with byte accounting.
#[derive(Debug)]
pub struct ByteLru {
    map: LruCache<String, u64>,
    bytes: u64,
}

impl Default for ByteLru {
    fn default() -> Self {
        ByteLru {
            map: LruCache::unbounded(),
            bytes: 0,
        }
    }
}

impl ByteLru {
    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains(key)
    }

    /// Mark `key` most recently used; returns its size.
    pub fn touch(&mut self, key: &str) -> Option<u64> {
        self.map.get(key).copied()
    }

    pub fn insert(&mut self, key: String, size: u64) {
        if let Some(old) = self.map.put(key, size) {
            self.bytes -= old;
        }
        self.bytes += size;
    }

    pub fn remove(&mut self, key: &str) -> Option<u64> {
        let size = self.map.pop(key)?;
        self.bytes -= size;
        Some(size)
    }

    pub fn pop_lru(&mut self) -> Option<(String, u64)> {
        let (k, size) = self.map.pop_lru()?;
        self.bytes -= size;
        Some((k, size))
    }
}

fn record_get(c: &mut CounterSet, kind: HitKind) -> HitKind {
    c.gets += 1;
    match kind {
        HitKind::Dram => c.dram_hits += 1,
        HitKind::Flash => {
            c.flash_hits += 1;
            c.flash_reads += 1;
        }
        HitKind::Miss => c.misses += 1,
    }
    kind
}

/// Exact LRU over DRAM alone.
#[derive(Debug)]
pub struct LruOracle {
    capacity: u64,
    lru: ByteLru,
    c: CounterSet,
}

impl LruOracle {
    pub fn new(capacity: u64) -> Self {
        LruOracle {
            capacity,
            lru: ByteLru::default(),
            c: CounterSet::default(),
        }
    }
}

impl Baseline for LruOracle {
    fn get(&mut self, key: &str) -> HitKind {
        let kind = if self.lru.touch(key).is_some() {
            HitKind::Dram
        } else {
            HitKind::Miss
        };
        record_get(&mut self.c, kind)
    }

    fn set(&mut self, key: &str, size: u64) {
        self.c.sets += 1;
        self.c.client_bytes_written += size;
        self.lru.insert(key.to_string(), size);
        while self.lru.bytes() > self.capacity {
            self.lru.pop_lru();
            self.c.dram_evictions += 1;
        }
    }

    fn delete(&mut self, key: &str) -> bool {
        let hit = self.lru.remove(key).is_some();
        self.c.deletes += hit as u64;
        hit
    }

    fn counters(&self) -> CounterSet {
        self.c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VictimLoc {
    /// Staged for the next segment; the generation tells stale staging
    /// entries apart.
    Staged(u64),
    Segment(u64),
}

/// DRAM LRU whose every eviction is appended to flash. Flash is a FIFO of
/// segments; a flash hit moves the object back to DRAM.
#[derive(Debug)]
pub struct VictimCache {
    dram_capacity: u64,
    segment_size: u64,
    slots: usize,
    dram: ByteLru,
    flash: HashMap<String, (VictimLoc, u64)>,
    staging: VecDeque<(String, u64, u64)>,
    staged_bytes: u64,
    generation: u64,
    segments: VecDeque<(u64, Vec<String>)>,
    next_seq: u64,
    c: CounterSet,
}

impl VictimCache {
    pub fn new(dram_capacity: u64, segment_size: u64, slots: u64) -> Self {
        VictimCache {
            dram_capacity,
            segment_size,
            slots: slots.max(1) as usize,
            dram: ByteLru::default(),
            flash: HashMap::new(),
            staging: VecDeque::new(),
            staged_bytes: 0,
            generation: 0,
            segments: VecDeque::new(),
            next_seq: 0,
            c: CounterSet::default(),
        }
    }

    fn forget_flash(&mut self, key: &str) -> bool {
        match self.flash.remove(key) {
            Some((VictimLoc::Staged(_), size)) => {
                self.staged_bytes -= size;
                true
            }
            Some(_) => true,
            None => false,
        }
    }

    fn stage(&mut self, key: String, size: u64) {
        self.generation += 1;
        self.flash.insert(key.clone(), (VictimLoc::Staged(self.generation), size));
        self.staging.push_back((key, size, self.generation));
        self.staged_bytes += size;
        while self.staged_bytes >= self.segment_size {
            self.write_segment();
        }
    }

    fn write_segment(&mut self) {
        if self.segments.len() == self.slots {
            let (seq, keys) = self.segments.pop_front().expect("full");
            for k in keys {
                if matches!(self.flash.get(&k), Some((VictimLoc::Segment(s), _)) if *s == seq) {
                    self.flash.remove(&k);
                }
            }
            self.c.segments_erased += 1;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let mut used = 0;
        let mut keys = Vec::new();
        while let Some((k, size, gen)) = self.staging.front().cloned() {
            let live = matches!(self.flash.get(&k), Some((VictimLoc::Staged(g), _)) if *g == gen);
            if !live {
                self.staging.pop_front();
                continue;
            }
            if used + size > self.segment_size {
                break;
            }
            self.staging.pop_front();
            used += size;
            self.staged_bytes -= size;
            self.flash.insert(k.clone(), (VictimLoc::Segment(seq), size));
            keys.push(k);
        }
        self.segments.push_back((seq, keys));
        self.c.segments_written += 1;
        self.c.flash_bytes_written += self.segment_size;
        self.c.segment_used_bytes += used;
    }

    fn admit_dram(&mut self, key: String, size: u64) {
        self.dram.insert(key, size);
        while self.dram.bytes() > self.dram_capacity {
            let (k, s) = self.dram.pop_lru().expect("over capacity");
            self.c.dram_evictions += 1;
            self.stage(k, s);
        }
    }

    pub fn flash_objects(&self) -> usize {
        self.flash.len()
    }
}

impl Baseline for VictimCache {
    fn get(&mut self, key: &str) -> HitKind {
        if self.dram.touch(key).is_some() {
            return record_get(&mut self.c, HitKind::Dram);
        }
        let Some(&(_, size)) = self.flash.get(key) else {
            return record_get(&mut self.c, HitKind::Miss);
        };
        self.forget_flash(key);
        self.admit_dram(key.to_string(), size);
        record_get(&mut self.c, HitKind::Flash)
    }

    fn set(&mut self, key: &str, size: u64) {
        self.c.sets += 1;
        self.c.client_bytes_written += size;
        self.forget_flash(key);
        self.admit_dram(key.to_string(), size);
    }

    fn delete(&mut self, key: &str) -> bool {
        let hit = self.dram.remove(key).is_some() | self.forget_flash(key);
        self.c.deletes += hit as u64;
        hit
    }

    fn counters(&self) -> CounterSet {
        let mut c = self.c;
        c.live_flash_objects = self.flash.len() as u64;
        c
    }
}

#[derive(Clone, Copy, Debug)]
struct RipqObject {
    size: u64,
    reads: u32,
    /// Logical queue.
    class: usize,
    /// (buffer class, generation) while the object waits in a DRAM class
    /// buffer; `None` once it is on flash.
    staged: Option<(usize, u64)>,
}

/// Approximation of a read-count-prioritized flash queue: a segmented LRU
/// with one queue per read count (capped at 7), each holding an eighth of
/// flash. DRAM holds only the per-class write buffers: every set enters the
/// class-0 buffer, and an object whose class rises on a read is written
/// again through its new class's buffer. Full buffers are flushed as
/// segments. A queue over its share demotes its least-recently-used object
/// one class down without rewriting it; class 0 evicts. Garbage left by
/// rewrites is not modeled.
#[derive(Debug)]
pub struct Ripq8 {
    queue_capacity: u64,
    segment_size: u64,
    queues: Vec<ByteLru>,
    buffers: Vec<VecDeque<(String, u64)>>,
    buffered: [u64; RIPQ_CLASSES],
    generation: u64,
    objects: HashMap<String, RipqObject>,
    c: CounterSet,
}

pub fn ripq_class(reads: u32) -> usize {
    (reads as usize).min(RIPQ_CLASSES - 1)
}

impl Ripq8 {
    pub fn new(flash_capacity: u64, segment_size: u64) -> Self {
        Ripq8 {
            queue_capacity: flash_capacity / RIPQ_CLASSES as u64,
            segment_size,
            queues: (0..RIPQ_CLASSES).map(|_| ByteLru::default()).collect(),
            buffers: (0..RIPQ_CLASSES).map(|_| VecDeque::new()).collect(),
            buffered: [0; RIPQ_CLASSES],
            generation: 0,
            objects: HashMap::new(),
            c: CounterSet::default(),
        }
    }

    fn flush_buffer(&mut self, class: usize) {
        let mut used = 0;
        while let Some((k, gen)) = self.buffers[class].front().cloned() {
            let obj = match self.objects.get_mut(&k) {
                Some(o) if o.staged == Some((class, gen)) => o,
                _ => {
                    self.buffers[class].pop_front();
                    continue;
                }
            };
            if used + obj.size > self.segment_size {
                break;
            }
            used += obj.size;
            obj.staged = None;
            self.buffered[class] -= obj.size;
            self.buffers[class].pop_front();
        }
        self.c.segments_written += 1;
        self.c.flash_bytes_written += self.segment_size;
        self.c.segment_used_bytes += used;
    }

    fn unstage(&mut self, obj: RipqObject) {
        if let Some((b, _)) = obj.staged {
            self.buffered[b] -= obj.size;
        }
    }

    /// Queue `key` in `class` and stage a copy in that class's buffer.
    fn write(&mut self, key: &str, class: usize) {
        self.generation += 1;
        let obj = *self.objects.get(key).expect("tracked");
        self.unstage(obj);
        let gen = self.generation;
        let o = self.objects.get_mut(key).expect("tracked");
        o.class = class;
        o.staged = Some((class, gen));
        self.queues[class].insert(key.to_string(), obj.size);
        self.buffers[class].push_back((key.to_string(), gen));
        self.buffered[class] += obj.size;
        while self.buffered[class] >= self.segment_size {
            self.flush_buffer(class);
        }
        self.rebalance(class);
    }

    /// Push overflow down from `class` to class 0, evicting from class 0.
    fn rebalance(&mut self, class: usize) {
        for q in (0..=class).rev() {
            while self.queues[q].bytes() > self.queue_capacity {
                let (k, size) = self.queues[q].pop_lru().expect("over capacity");
                if q == 0 {
                    let obj = self.objects.remove(&k).expect("tracked");
                    self.unstage(obj);
                } else {
                    self.objects.get_mut(&k).expect("tracked").class = q - 1;
                    self.queues[q - 1].insert(k, size);
                }
            }
        }
    }

    fn drop_object(&mut self, key: &str) -> bool {
        let Some(obj) = self.objects.remove(key) else {
            return false;
        };
        self.queues[obj.class].remove(key);
        self.unstage(obj);
        true
    }
}

impl Baseline for Ripq8 {
    fn get(&mut self, key: &str) -> HitKind {
        let Some(obj) = self.objects.get_mut(key) else {
            return record_get(&mut self.c, HitKind::Miss);
        };
        obj.reads = obj.reads.saturating_add(1);
        let kind = if obj.staged.is_some() {
            HitKind::Dram
        } else {
            HitKind::Flash
        };
        let (class, next) = (obj.class, ripq_class(obj.reads));
        if next > class {
            self.queues[class].remove(key);
            self.write(key, next);
        } else {
            self.queues[class].touch(key);
        }
        record_get(&mut self.c, kind)
    }

    fn set(&mut self, key: &str, size: u64) {
        self.c.sets += 1;
        self.c.client_bytes_written += size;
        self.drop_object(key);
        self.objects.insert(
            key.to_string(),
            RipqObject {
                size,
                reads: 0,
                class: 0,
                staged: None,
            },
        );
        self.write(key, 0);
    }

    fn delete(&mut self, key: &str) -> bool {
        let hit = self.drop_object(key);
        self.c.deletes += hit as u64;
        hit
    }

    fn counters(&self) -> CounterSet {
        let mut c = self.c;
        c.live_flash_objects = self.objects.values().filter(|o| o.staged.is_none()).count() as u64;
        c
    }
}
