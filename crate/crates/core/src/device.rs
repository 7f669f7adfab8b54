//! Flash medium abstraction. Writes happen only as whole segments appended
//! in FIFO slot order, and space is reclaimed only by erasing the oldest
//! segment, so the device always sees large sequential writes.

use std::fs::{File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

use crate::error::{Error, Result};

/// Monotonic segment sequence number. The physical slot is
/// `seq % num_slots`; the index keeps only the low 24 bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SegmentSeq(pub u64);

impl SegmentSeq {
    pub const MASK_24: u64 = (1 << 24) - 1;

    pub fn low24(self) -> u32 {
        (self.0 & Self::MASK_24) as u32
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DeviceStats {
    pub bytes_written_to_flash: u64,
    pub segments_written: u64,
    pub segments_erased: u64,
    pub flash_reads: u64,
}

/// One physical write issued to the backing medium.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WriteRecord {
    pub offset: u64,
    pub len: u64,
}

pub trait FlashDevice: Send {
    fn segment_size(&self) -> usize;

    fn num_slots(&self) -> u64;

    /// Write one full segment into the next free slot.
    fn append_segment(&mut self, payload: &[u8]) -> Result<SegmentSeq>;

    /// Erase the oldest live segment and return its sequence number.
    fn erase_oldest(&mut self) -> Result<SegmentSeq>;

    /// Read `len` bytes at `offset` within live segment `seq`. Each call is
    /// one counted device access.
    fn read(&self, seq: SegmentSeq, offset: usize, len: usize) -> Result<Vec<u8>>;

    fn stats(&self) -> DeviceStats;

    /// Physical writes issued so far, for devices that keep a log.
    fn physical_writes(&self) -> Option<&[WriteRecord]> {
        None
    }

    /// Oldest live segment, if any.
    fn oldest_live(&self) -> Option<SegmentSeq>;

    /// Most recently written live segment, if any.
    fn newest(&self) -> Option<SegmentSeq>;

    fn is_live(&self, seq: SegmentSeq) -> bool {
        match (self.oldest_live(), self.newest()) {
            (Some(lo), Some(hi)) => lo <= seq && seq <= hi,
            _ => false,
        }
    }

    fn live_segments(&self) -> u64 {
        match (self.oldest_live(), self.newest()) {
            (Some(lo), Some(hi)) => hi.0 - lo.0 + 1,
            _ => 0,
        }
    }

    fn is_full(&self) -> bool {
        self.live_segments() == self.num_slots()
    }
}

/// FIFO bookkeeping shared by both backends.
#[derive(Debug)]
struct SlotRing {
    segment_size: usize,
    num_slots: u64,
    next_seq: u64,
    oldest_live: u64,
    bytes_written: u64,
    segments_written: u64,
    segments_erased: u64,
    flash_reads: AtomicU64,
}

impl SlotRing {
    fn new(segment_size: usize, num_slots: u64) -> Result<Self> {
        if segment_size == 0 || num_slots == 0 {
            return Err(Error::Config("device needs at least one non-empty slot".into()));
        }
        Ok(SlotRing {
            segment_size,
            num_slots,
            next_seq: 0,
            oldest_live: 0,
            bytes_written: 0,
            segments_written: 0,
            segments_erased: 0,
            flash_reads: AtomicU64::new(0),
        })
    }

    fn live(&self) -> u64 {
        self.next_seq - self.oldest_live
    }

    /// Validate an append and return the (seq, slot) it will occupy.
    fn begin_append(&self, payload: &[u8]) -> Result<(SegmentSeq, u64)> {
        if payload.len() != self.segment_size {
            return Err(Error::SegmentSize {
                got: payload.len(),
                expected: self.segment_size,
            });
        }
        if self.live() == self.num_slots {
            return Err(Error::DeviceFull);
        }
        Ok((SegmentSeq(self.next_seq), self.next_seq % self.num_slots))
    }

    fn commit_append(&mut self) {
        self.next_seq += 1;
        self.bytes_written += self.segment_size as u64;
        self.segments_written += 1;
    }

    fn erase(&mut self) -> Result<SegmentSeq> {
        if self.live() == 0 {
            return Err(Error::DeviceEmpty);
        }
        let seq = SegmentSeq(self.oldest_live);
        self.oldest_live += 1;
        self.segments_erased += 1;
        Ok(seq)
    }

    /// Validate a read and return the physical slot.
    fn check_read(&self, seq: SegmentSeq, offset: usize, len: usize) -> Result<u64> {
        if seq.0 < self.oldest_live || seq.0 >= self.next_seq {
            return Err(Error::DeadSegment(seq));
        }
        if offset.checked_add(len).is_none_or(|end| end > self.segment_size) {
            return Err(Error::ReadRange { offset, len });
        }
        self.flash_reads.fetch_add(1, Ordering::Relaxed);
        Ok(seq.0 % self.num_slots)
    }

    fn stats(&self) -> DeviceStats {
        DeviceStats {
            bytes_written_to_flash: self.bytes_written,
            segments_written: self.segments_written,
            segments_erased: self.segments_erased,
            flash_reads: self.flash_reads.load(Ordering::Relaxed),
        }
    }

    fn oldest(&self) -> Option<SegmentSeq> {
        (self.live() > 0).then_some(SegmentSeq(self.oldest_live))
    }

    fn newest(&self) -> Option<SegmentSeq> {
        (self.live() > 0).then(|| SegmentSeq(self.next_seq - 1))
    }
}

/// Device held entirely in memory.
#[derive(Debug)]
pub struct MemDevice {
    ring: SlotRing,
    slots: Vec<Vec<u8>>,
}

impl MemDevice {
    pub fn new(segment_size: usize, num_slots: u64) -> Result<Self> {
        Ok(MemDevice {
            ring: SlotRing::new(segment_size, num_slots)?,
            slots: (0..num_slots).map(|_| Vec::new()).collect(),
        })
    }
}

impl FlashDevice for MemDevice {
    fn segment_size(&self) -> usize {
        self.ring.segment_size
    }

    fn num_slots(&self) -> u64 {
        self.ring.num_slots
    }

    fn append_segment(&mut self, payload: &[u8]) -> Result<SegmentSeq> {
        let (seq, slot) = self.ring.begin_append(payload)?;
        let buf = &mut self.slots[slot as usize];
        buf.clear();
        buf.extend_from_slice(payload);
        self.ring.commit_append();
        Ok(seq)
    }

    fn erase_oldest(&mut self) -> Result<SegmentSeq> {
        self.ring.erase()
    }

    fn read(&self, seq: SegmentSeq, offset: usize, len: usize) -> Result<Vec<u8>> {
        let slot = self.ring.check_read(seq, offset, len)?;
        Ok(self.slots[slot as usize][offset..offset + len].to_vec())
    }

    fn stats(&self) -> DeviceStats {
        self.ring.stats()
    }

    fn oldest_live(&self) -> Option<SegmentSeq> {
        self.ring.oldest()
    }

    fn newest(&self) -> Option<SegmentSeq> {
        self.ring.newest()
    }
}

/// Device backed by one preallocated file; slot `i` occupies bytes
/// `[i * segment_size, (i + 1) * segment_size)`.
#[derive(Debug)]
pub struct FileDevice {
    ring: SlotRing,
    file: File,
    path: PathBuf,
    drop_page_cache: bool,
    write_log: Vec<WriteRecord>,
}

impl FileDevice {
    /// Create (or truncate) `path` to `segment_size * num_slots` bytes.
    pub fn create(path: impl AsRef<Path>, segment_size: usize, num_slots: u64) -> Result<Self> {
        let ring = SlotRing::new(segment_size, num_slots)?;
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(&path)?;
        file.set_len(segment_size as u64 * num_slots)?;
        Ok(FileDevice {
            ring,
            file,
            path,
            drop_page_cache: true,
            write_log: Vec::new(),
        })
    }

    /// Whether to flush each written segment and evict it from the OS page
    /// cache, so later reads hit the medium. On by default.
    pub fn set_drop_page_cache(&mut self, on: bool) {
        self.drop_page_cache = on;
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Every physical write issued so far, in order.
    pub fn write_log(&self) -> &[WriteRecord] {
        &self.write_log
    }

    fn evict_range(&self, offset: u64, len: u64) -> Result<()> {
        self.file.sync_data()?;
        // SAFETY: plain advisory syscall on a file descriptor we own.
        let rc = unsafe {
            libc::posix_fadvise(
                std::os::unix::io::AsRawFd::as_raw_fd(&self.file),
                offset as libc::off_t,
                len as libc::off_t,
                libc::POSIX_FADV_DONTNEED,
            )
        };
        if rc != 0 {
            log::debug!("posix_fadvise failed with {rc}; page cache left intact");
        }
        Ok(())
    }
}

impl FlashDevice for FileDevice {
    fn segment_size(&self) -> usize {
        self.ring.segment_size
    }

    fn num_slots(&self) -> u64 {
        self.ring.num_slots
    }

    fn append_segment(&mut self, payload: &[u8]) -> Result<SegmentSeq> {
        let (seq, slot) = self.ring.begin_append(payload)?;
        let offset = slot * self.ring.segment_size as u64;
        self.file.write_all_at(payload, offset)?;
        if self.drop_page_cache {
            self.evict_range(offset, payload.len() as u64)?;
        }
        self.write_log.push(WriteRecord {
            offset,
            len: payload.len() as u64,
        });
        self.ring.commit_append();
        Ok(seq)
    }

    fn erase_oldest(&mut self) -> Result<SegmentSeq> {
        self.ring.erase()
    }

    fn physical_writes(&self) -> Option<&[WriteRecord]> {
        Some(&self.write_log)
    }

    fn read(&self, seq: SegmentSeq, offset: usize, len: usize) -> Result<Vec<u8>> {
        let slot = self.ring.check_read(seq, offset, len)?;
        let mut buf = vec![0u8; len];
        self.file
            .read_exact_at(&mut buf, slot * self.ring.segment_size as u64 + offset as u64)?;
        Ok(buf)
    }

    fn stats(&self) -> DeviceStats {
        self.ring.stats()
    }

    fn oldest_live(&self) -> Option<SegmentSeq> {
        self.ring.oldest()
    }

    fn newest(&self) -> Option<SegmentSeq> {
        self.ring.newest()
    }
}

/// Check that `log` consists solely of segment-sized, slot-aligned writes
/// that visit slots in FIFO order (0, 1, ..., n-1, 0, ...). Returns the
/// indices of offending writes.
pub fn sequential_write_violations(
    log: &[WriteRecord],
    segment_size: u64,
    num_slots: u64,
) -> Vec<usize> {
    log.iter()
        .enumerate()
        .filter(|(i, w)| {
            w.len != segment_size || w.offset != (*i as u64 % num_slots) * segment_size
        })
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SEG: usize = 64;

    fn payload(tag: u8) -> Vec<u8> {
        (0..SEG).map(|i| tag.wrapping_add(i as u8)).collect()
    }

    fn devices(slots: u64) -> (MemDevice, FileDevice, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let mut file = FileDevice::create(dir.path().join("flash"), SEG, slots).unwrap();
        file.set_drop_page_cache(false);
        (MemDevice::new(SEG, slots).unwrap(), file, dir)
    }

    #[test]
    fn first_append_is_seq_zero() {
        let mut d = MemDevice::new(SEG, 4).unwrap();
        assert_eq!(d.append_segment(&payload(1)).unwrap(), SegmentSeq(0));
        assert_eq!(d.read(SegmentSeq(0), 0, SEG).unwrap(), payload(1));
        let s = d.stats();
        assert_eq!((s.segments_written, s.bytes_written_to_flash), (1, SEG as u64));
    }

    #[test]
    fn fifo_slot_recycling() {
        let (_, mut d, _dir) = devices(3);
        for t in 0..3 {
            d.append_segment(&payload(t)).unwrap();
        }
        assert_eq!(d.append_segment(&payload(9)), Err(Error::DeviceFull));
        assert_eq!(d.erase_oldest().unwrap(), SegmentSeq(0));
        assert_eq!(d.append_segment(&payload(3)).unwrap(), SegmentSeq(3));
        assert_eq!(d.write_log()[3].offset, 0);
        assert_eq!(d.read(SegmentSeq(3), 0, SEG).unwrap(), payload(3));
        assert!(sequential_write_violations(d.write_log(), SEG as u64, 3).is_empty());
    }

    #[test]
    fn erase_order_and_errors() {
        let mut d = MemDevice::new(SEG, 4).unwrap();
        assert_eq!(d.erase_oldest(), Err(Error::DeviceEmpty));
        for t in 0..3 {
            d.append_segment(&payload(t)).unwrap();
        }
        assert_eq!(d.erase_oldest().unwrap(), SegmentSeq(0));
        assert_eq!(d.oldest_live(), Some(SegmentSeq(1)));
        assert_eq!(d.read(SegmentSeq(0), 0, 1), Err(Error::DeadSegment(SegmentSeq(0))));
        assert_eq!(
            d.append_segment(&[0u8; SEG - 1]),
            Err(Error::SegmentSize { got: SEG - 1, expected: SEG })
        );
    }

    #[test]
    fn read_bounds_and_accounting() {
        let mut d = MemDevice::new(SEG, 2).unwrap();
        let seq = d.append_segment(&payload(0)).unwrap();
        assert_eq!(
            d.read(seq, SEG - 1, 2),
            Err(Error::ReadRange { offset: SEG - 1, len: 2 })
        );
        let before = d.stats().flash_reads;
        for _ in 0..100 {
            d.read(seq, 3, 5).unwrap();
        }
        assert_eq!(d.stats().flash_reads - before, 100);
    }

    #[test]
    fn audit_flags_misaligned_writes() {
        let log = [
            WriteRecord { offset: 0, len: 64 },
            WriteRecord { offset: 128, len: 64 },
            WriteRecord { offset: 64, len: 32 },
        ];
        assert_eq!(sequential_write_violations(&log, 64, 4), vec![1, 2]);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Append(u8),
        Erase,
        Read(u64, usize, usize),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            any::<u8>().prop_map(Op::Append),
            Just(Op::Erase),
            (0u64..12, 0usize..SEG + 4, 0usize..SEG + 4).prop_map(|(s, o, l)| Op::Read(s, o, l)),
        ]
    }

    proptest! {
        #[test]
        fn backends_are_equivalent(ops in proptest::collection::vec(op(), 1..60)) {
            let (mut mem, mut file, _dir) = devices(4);
            for op in ops {
                match op {
                    Op::Append(t) => prop_assert_eq!(
                        mem.append_segment(&payload(t)), file.append_segment(&payload(t))),
                    Op::Erase => prop_assert_eq!(mem.erase_oldest(), file.erase_oldest()),
                    Op::Read(s, o, l) => prop_assert_eq!(
                        mem.read(SegmentSeq(s), o, l), file.read(SegmentSeq(s), o, l)),
                }
                prop_assert_eq!(mem.stats(), file.stats());
                prop_assert_eq!(mem.oldest_live(), file.oldest_live());
                prop_assert_eq!(mem.newest(), file.newest());
                let s = mem.stats();
                prop_assert_eq!(s.bytes_written_to_flash, s.segments_written * SEG as u64);
            }
            prop_assert!(sequential_write_violations(file.write_log(), SEG as u64, 4).is_empty());
        }
    }
}
