//! Per-segment bloom filters. Segments are immutable, so each filter is
//! sized exactly for its contents when the segment is sealed and never
//! needs deletion support.

use xxhash_rust::xxh3::xxh3_128_with_seed;

const BLOOM_SEED: u64 = 0xB100_F11E_5EED_0001;

/// Double-hashing pair derived from one 128-bit hash of the key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BloomHash {
    h1: u64,
    h2: u64,
}

impl BloomHash {
    pub fn of(key: &[u8]) -> Self {
        let h = xxh3_128_with_seed(key, BLOOM_SEED);
        BloomHash {
            h1: h as u64,
            h2: ((h >> 64) as u64) | 1,
        }
    }
}

/// Bits per item for a target false-positive rate: `ceil(-ln p / ln^2 2)`.
pub fn bits_per_item(fp_rate: f64) -> u32 {
    (-fp_rate.ln() / (std::f64::consts::LN_2 * std::f64::consts::LN_2)).ceil() as u32
}

#[derive(Clone, Debug)]
pub struct BloomFilter {
    words: Box<[u64]>,
    num_bits: u64,
    num_hashes: u32,
}

impl BloomFilter {
    /// Filter sized for `items` entries at `fp_rate`.
    pub fn with_capacity(items: usize, fp_rate: f64) -> Self {
        let bpi = bits_per_item(fp_rate).max(1);
        let num_bits = ((items.max(1) as u64) * bpi as u64).div_ceil(64) * 64;
        let num_hashes = ((bpi as f64) * std::f64::consts::LN_2).round().max(1.0) as u32;
        BloomFilter {
            words: vec![0u64; (num_bits / 64) as usize].into_boxed_slice(),
            num_bits,
            num_hashes,
        }
    }

    pub fn from_hashes(hashes: &[BloomHash], fp_rate: f64) -> Self {
        let mut f = Self::with_capacity(hashes.len(), fp_rate);
        for h in hashes {
            f.insert_hash(*h);
        }
        f
    }

    #[inline]
    fn bit_positions(&self, h: BloomHash) -> impl Iterator<Item = u64> + '_ {
        (0..self.num_hashes as u64).map(move |i| h.h1.wrapping_add(i.wrapping_mul(h.h2)) % self.num_bits)
    }

    pub fn insert_hash(&mut self, h: BloomHash) {
        for i in 0..self.num_hashes as u64 {
            let bit = h.h1.wrapping_add(i.wrapping_mul(h.h2)) % self.num_bits;
            self.words[(bit / 64) as usize] |= 1 << (bit % 64);
        }
    }

    pub fn insert(&mut self, key: &[u8]) {
        self.insert_hash(BloomHash::of(key));
    }

    pub fn contains_hash(&self, h: BloomHash) -> bool {
        self.bit_positions(h)
            .all(|bit| self.words[(bit / 64) as usize] & (1 << (bit % 64)) != 0)
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.contains_hash(BloomHash::of(key))
    }

    pub fn num_bits(&self) -> u64 {
        self.num_bits
    }

    pub fn num_hashes(&self) -> u32 {
        self.num_hashes
    }

    pub fn size_bytes(&self) -> u64 {
        self.num_bits / 8
    }
}
