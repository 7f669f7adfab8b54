//! Packs flash-bound objects into one segment image. Each object may only
//! start at one of `K` hash-determined offsets, so its location is
//! recoverable from (segment, hash function id) alone.

use std::collections::BTreeMap;

use crate::bloom::{BloomFilter, BloomHash};
use crate::error::{Error, Result};
use crate::model::{record_len, write_record, HashFamily, Key, RECORD_HEADER_LEN};

/// Offset of `key` under hash function `fn_id` inside a segment.
///
/// The modulus depends only on the segment size (not on the record length)
/// so a reader can recompute it before it knows how long the record is.
/// Offsets whose record would overrun the segment count as collisions.
#[inline]
pub fn placement_offset(hashes: &HashFamily, fn_id: usize, key: &[u8], segment_size: usize) -> usize {
    let span = (segment_size - RECORD_HEADER_LEN + 1) as u64;
    (hashes.hash_unchecked(fn_id, key) % span) as usize
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    pub key: Key,
    pub hash_fn_id: u8,
    pub offset: usize,
    pub record_len: usize,
}

/// A segment under construction.
#[derive(Clone, Debug)]
pub struct SegmentImage {
    segment_size: usize,
    buf: Vec<u8>,
    /// Free extents as `start -> end` (exclusive), non-adjacent.
    free: BTreeMap<usize, usize>,
    placements: Vec<Placement>,
    bloom_hashes: Vec<BloomHash>,
    used: usize,
}

impl SegmentImage {
    pub fn new(segment_size: usize) -> Self {
        assert!(segment_size > RECORD_HEADER_LEN, "segment too small");
        let mut free = BTreeMap::new();
        free.insert(0, segment_size);
        SegmentImage {
            segment_size,
            buf: vec![0u8; segment_size],
            free,
            placements: Vec::new(),
            bloom_hashes: Vec::new(),
            used: 0,
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.buf
    }

    pub fn placements(&self) -> &[Placement] {
        &self.placements
    }

    pub fn used_bytes(&self) -> usize {
        self.used
    }

    pub fn utilization(&self) -> f64 {
        self.used as f64 / self.segment_size as f64
    }

    /// Whether `[start, end)` lies entirely inside one free extent.
    fn is_free(&self, start: usize, end: usize) -> bool {
        end <= self.segment_size
            && self
                .free
                .range(..=start)
                .next_back()
                .is_some_and(|(_, &free_end)| free_end >= end)
    }

    fn take(&mut self, start: usize, end: usize) {
        let (&fs, &fe) = self.free.range(..=start).next_back().expect("extent is free");
        self.free.remove(&fs);
        if fs < start {
            self.free.insert(fs, start);
        }
        if end < fe {
            self.free.insert(end, fe);
        }
    }

    /// Mark `[start, end)` as occupied without writing a record.
    #[cfg(test)]
    pub(crate) fn reserve(&mut self, start: usize, end: usize) {
        assert!(self.is_free(start, end));
        self.take(start, end);
        self.used += end - start;
    }

    /// Try hash functions `0..K` in order and place the record at the first
    /// offset whose extent is free. `Ok(None)` means no offset fits and the
    /// image is untouched.
    pub fn try_place(&mut self, hashes: &HashFamily, key: &Key, value: &[u8]) -> Result<Option<Placement>> {
        let len = record_len(key.len(), value.len());
        if len > self.segment_size {
            return Err(Error::Oversize {
                len: len as u64,
                limit: self.segment_size as u64,
            });
        }
        for fn_id in 0..hashes.k() {
            let offset = placement_offset(hashes, fn_id, key.as_bytes(), self.segment_size);
            if !self.is_free(offset, offset + len) {
                continue;
            }
            self.take(offset, offset + len);
            let mut rec = Vec::with_capacity(len);
            write_record(&mut rec, key, value)?;
            self.buf[offset..offset + len].copy_from_slice(&rec);
            self.used += len;
            self.bloom_hashes.push(BloomHash::of(key.as_bytes()));
            let placement = Placement {
                key: key.clone(),
                hash_fn_id: fn_id as u8,
                offset,
                record_len: len,
            };
            self.placements.push(placement.clone());
            return Ok(Some(placement));
        }
        Ok(None)
    }

    /// Membership as the sealed bloom filter will report it (exact here).
    pub fn contains(&self, key: &[u8]) -> bool {
        let h = BloomHash::of(key);
        self.bloom_hashes.contains(&h)
    }

    /// Finish the image: returns the segment bytes, the placements and a
    /// bloom filter sized for exactly the placed keys.
    pub fn seal(self, fp_rate: f64) -> SealedSegment {
        SealedSegment {
            bloom: BloomFilter::from_hashes(&self.bloom_hashes, fp_rate),
            used_bytes: self.used,
            bytes: self.buf,
            placements: self.placements,
        }
    }
}

#[derive(Debug)]
pub struct SealedSegment {
    pub bytes: Vec<u8>,
    pub placements: Vec<Placement>,
    pub bloom: BloomFilter,
    pub used_bytes: usize,
}

/// One flash-bound object offered to the packer.
#[derive(Clone, Copy, Debug)]
pub struct Candidate<'a> {
    pub key: &'a Key,
    pub value: &'a [u8],
    pub score: f64,
}

impl Candidate<'_> {
    pub fn record_len(&self) -> usize {
        record_len(self.key.len(), self.value.len())
    }
}

#[derive(Debug)]
pub struct BuildOutcome {
    pub image: SegmentImage,
    /// Indices into the candidate slice, in placement order.
    pub placed: Vec<usize>,
    pub skipped: Vec<usize>,
    /// Mean of (winning hash function id + 1) over placed objects.
    pub avg_hash_attempts: f64,
}

/// Pack as many candidates as fit into a fresh segment, largest first
/// (ties: higher score first, then key order).
///
/// Candidates larger than the segment are reported as skipped.
pub fn build_segment(hashes: &HashFamily, segment_size: usize, candidates: &[Candidate<'_>]) -> BuildOutcome {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&candidates[a], &candidates[b]);
        cb.record_len()
            .cmp(&ca.record_len())
            .then(cb.score.total_cmp(&ca.score))
            .then_with(|| ca.key.cmp(cb.key))
    });

    let mut image = SegmentImage::new(segment_size);
    let mut placed = Vec::new();
    let mut skipped = Vec::new();
    let mut attempts = 0u64;
    for idx in order {
        let c = &candidates[idx];
        match image.try_place(hashes, c.key, c.value) {
            Ok(Some(p)) => {
                attempts += p.hash_fn_id as u64 + 1;
                placed.push(idx);
            }
            Ok(None) | Err(_) => skipped.push(idx),
        }
    }
    let avg_hash_attempts = if placed.is_empty() {
        0.0
    } else {
        attempts as f64 / placed.len() as f64
    };
    BuildOutcome {
        image,
        placed,
        skipped,
        avg_hash_attempts,
    }
}
