//! Shared vocabulary: keys, trace time, the on-flash record layout and the
//! seeded hash family used for both index probing and segment placement.

use std::fmt;

use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};

/// Longest key accepted, matching the memcached text protocol.
pub const MAX_KEY_LEN: usize = 250;

/// Size of the fixed record header: 1-byte key length + 4-byte value length.
pub const RECORD_HEADER_LEN: usize = 5;

/// Upper bound on the hash family size; the index stores the placement
/// function id in 4 bits.
pub const MAX_HASH_FUNCTIONS: usize = 16;

/// An opaque, non-empty key of at most [`MAX_KEY_LEN`] bytes.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Key(Box<[u8]>);

impl Key {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self> {
        let bytes = bytes.into();
        if bytes.is_empty() || bytes.len() > MAX_KEY_LEN {
            return Err(Error::InvalidKey {
                len: bytes.len(),
                max: MAX_KEY_LEN,
            });
        }
        Ok(Key(bytes.into_boxed_slice()))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Tenant namespace of the key: the bytes before the first `:`, or the
    /// empty (default) tenant when there is no separator.
    pub fn tenant(&self) -> &[u8] {
        match self.0.iter().position(|&b| b == b':') {
            Some(i) => &self.0[..i],
            None => &[],
        }
    }
}

impl TryFrom<&str> for Key {
    type Error = Error;

    fn try_from(s: &str) -> Result<Self> {
        Key::new(s.as_bytes())
    }
}

impl TryFrom<&[u8]> for Key {
    type Error = Error;

    fn try_from(s: &[u8]) -> Result<Self> {
        Key::new(s)
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Key({:?})", String::from_utf8_lossy(&self.0))
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.0))
    }
}

/// Microseconds since the trace epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e6).round() as u64)
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Elapsed seconds since `earlier`, saturating at zero.
    pub fn secs_since(self, earlier: Timestamp) -> f64 {
        self.0.saturating_sub(earlier.0) as f64 / 1e6
    }

    pub fn plus_secs(self, secs: f64) -> Timestamp {
        Timestamp(self.0.saturating_add((secs * 1e6).round() as u64))
    }
}

/// Serialized length of a record holding `key_len` and `value_len` bytes.
pub fn record_len(key_len: usize, value_len: usize) -> usize {
    RECORD_HEADER_LEN + key_len + value_len
}

/// Encode `key`/`value` as `[key_len:u8][value_len:u32 LE][key][value]`.
pub fn serialize_record(key: &Key, value: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(record_len(key.len(), value.len()));
    write_record(&mut out, key, value)?;
    Ok(out)
}

/// Append the record encoding of `key`/`value` to `out`.
pub fn write_record(out: &mut Vec<u8>, key: &Key, value: &[u8]) -> Result<()> {
    let value_len = u32::try_from(value.len()).map_err(|_| Error::Oversize {
        len: value.len() as u64,
        limit: u32::MAX as u64,
    })?;
    out.push(key.len() as u8);
    out.extend_from_slice(&value_len.to_le_bytes());
    out.extend_from_slice(key.as_bytes());
    out.extend_from_slice(value);
    Ok(())
}

/// Record header decoded from the first [`RECORD_HEADER_LEN`] bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordHeader {
    pub key_len: usize,
    pub value_len: usize,
}

impl RecordHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < RECORD_HEADER_LEN || bytes[0] == 0 {
            return Err(Error::BadRecord);
        }
        let value_len = u32::from_le_bytes([bytes[1], bytes[2], bytes[3], bytes[4]]);
        Ok(RecordHeader {
            key_len: bytes[0] as usize,
            value_len: value_len as usize,
        })
    }

    pub fn total_len(&self) -> usize {
        record_len(self.key_len, self.value_len)
    }
}

/// Decode a record from the front of `bytes`, returning the key, the value
/// and the number of bytes consumed.
pub fn deserialize_record(bytes: &[u8]) -> Result<(Key, Vec<u8>, usize)> {
    let header = RecordHeader::parse(bytes)?;
    let total = header.total_len();
    if bytes.len() < total {
        return Err(Error::BadRecord);
    }
    let key_end = RECORD_HEADER_LEN + header.key_len;
    let key = Key::new(&bytes[RECORD_HEADER_LEN..key_end]).map_err(|_| Error::BadRecord)?;
    Ok((key, bytes[key_end..total].to_vec(), total))
}

const fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const fn family_seeds() -> [u64; MAX_HASH_FUNCTIONS] {
    let mut seeds = [0u64; MAX_HASH_FUNCTIONS];
    let mut i = 0;
    while i < MAX_HASH_FUNCTIONS {
        seeds[i] = splitmix64(0x5EED_0000_0000_0000 ^ (i as u64 * 0x1000_0000_0001));
        i += 1;
    }
    seeds
}

/// Fixed per-function seeds; changing them invalidates every flash image.
pub const HASH_SEEDS: [u64; MAX_HASH_FUNCTIONS] = family_seeds();

/// `K` independent 64-bit hash functions, one keyed xxh3 per fixed seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashFamily {
    k: usize,
}

impl HashFamily {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 || k > MAX_HASH_FUNCTIONS {
            return Err(Error::Config(format!(
                "num_hash_functions must be in 1..={MAX_HASH_FUNCTIONS}, got {k}"
            )));
        }
        Ok(HashFamily { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn hash(&self, index: usize, key: &[u8]) -> Result<u64> {
        if index >= self.k {
            return Err(Error::HashIndex { index, k: self.k });
        }
        Ok(self.hash_unchecked(index, key))
    }

    /// Hash without the `index < K` check; `index` must still be below 16.
    #[inline]
    pub(crate) fn hash_unchecked(&self, index: usize, key: &[u8]) -> u64 {
        xxh3_64_with_seed(key, HASH_SEEDS[index])
    }
}
