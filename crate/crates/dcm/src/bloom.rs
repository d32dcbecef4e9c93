//! Seeded Bloom filter with double hashing.
//!
//! The k probe positions come from a single 128-bit keyed hash:
//! `index_i = (h1 + i * h2) mod m`. One hash evaluation per operation, and
//! filters built with the same seed share their whole hash function family,
//! which the per-action filters on a switch rely on.

use crate::error::Error;
use crate::hash::hash128;
use crate::Result;

const MAGIC: &[u8; 4] = b"DCMF";
const VERSION: u8 = 1;
/// Serialized header: magic, version, m, k, seed, inserted.
const HEADER_BYTES: usize = 4 + 1 + 8 + 1 + 8 + 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    bits: Vec<u8>,
    m: u64,
    k: u32,
    seed: u64,
    inserted: u64,
}

impl BloomFilter {
    /// Creates an empty filter with `m` bits and `k` probes per key.
    pub fn new(m: u64, k: u32, seed: u64) -> Result<BloomFilter> {
        if m == 0 {
            return Err(Error::InvalidParameter("bloom filter needs m >= 1".into()));
        }
        if k == 0 || k > u8::MAX as u32 {
            return Err(Error::InvalidParameter(format!("bloom filter k={k} out of range 1..=255")));
        }
        Ok(BloomFilter {
            bits: vec![0u8; m.div_ceil(8) as usize],
            m,
            k,
            seed,
            inserted: 0,
        })
    }

    /// Sized via [`size_for`] so that `n` keys stay under `target_fp`.
    pub fn with_capacity(n: u64, target_fp: f64, seed: u64) -> Result<BloomFilter> {
        let (m, k) = size_for(n, target_fp)?;
        BloomFilter::new(m, k, seed)
    }

    pub fn num_bits(&self) -> u64 {
        self.m
    }

    pub fn num_hashes(&self) -> u32 {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of `insert` calls since construction (not deduplicated).
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Serialized size in bytes.
    pub fn wire_len(&self) -> usize {
        HEADER_BYTES + self.bits.len()
    }

    #[inline]
    fn index(&self, h1: u64, h2: u64, i: u64) -> usize {
        (h1.wrapping_add(i.wrapping_mul(h2)) % self.m) as usize
    }

    pub fn insert(&mut self, key: &[u8]) {
        let (h1, h2) = hash128(key, self.seed);
        for i in 0..self.k as u64 {
            let j = self.index(h1, h2, i);
            self.bits[j / 8] |= 1 << (j % 8);
        }
        self.inserted += 1;
    }

    /// Membership test; false negatives are impossible.
    pub fn query(&self, key: &[u8]) -> bool {
        let (h1, h2) = hash128(key, self.seed);
        (0..self.k as u64).all(|i| {
            let j = self.index(h1, h2, i);
            self.bits[j / 8] & (1 << (j % 8)) != 0
        })
    }

    /// Analytic false-positive rate at the current insert count.
    pub fn estimated_fp_rate(&self) -> f64 {
        false_positive_rate(self.inserted, self.m, self.k).expect("m, k validated at construction")
    }

    /// Binary encoding: `DCMF`, version, m, k, seed, inserted, then the bit
    /// array with bit j at byte j/8, position j%8. Integers little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.m.to_le_bytes());
        out.push(self.k as u8);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.inserted.to_le_bytes());
        out.extend_from_slice(&self.bits);
        out
    }

    /// Decodes one filter from the front of `data`; returns it and the number
    /// of bytes consumed so blobs can be concatenated.
    pub fn from_bytes(data: &[u8]) -> Result<(BloomFilter, usize)> {
        if data.len() < HEADER_BYTES {
            return Err(Error::Malformed("filter blob shorter than header".into()));
        }
        if &data[0..4] != MAGIC {
            return Err(Error::Malformed("bad filter magic".into()));
        }
        if data[4] != VERSION {
            return Err(Error::Malformed(format!("unsupported filter version {}", data[4])));
        }
        let m = u64::from_le_bytes(data[5..13].try_into().unwrap());
        let k = data[13] as u32;
        let seed = u64::from_le_bytes(data[14..22].try_into().unwrap());
        let inserted = u64::from_le_bytes(data[22..30].try_into().unwrap());
        if m == 0 || k == 0 {
            return Err(Error::Malformed("filter blob has m=0 or k=0".into()));
        }
        let nbytes = m.div_ceil(8) as usize;
        let total = HEADER_BYTES + nbytes;
        if data.len() < total {
            return Err(Error::Malformed(format!(
                "filter blob truncated: need {total} bytes, have {}",
                data.len()
            )));
        }
        let bits = data[HEADER_BYTES..total].to_vec();
        Ok((BloomFilter { bits, m, k, seed, inserted }, total))
    }
}

/// `(1 - e^(-k*n/m))^k`: expected false-positive rate after `n` inserts into
/// an `m`-bit filter with `k` hash functions.
pub fn false_positive_rate(n: u64, m: u64, k: u32) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidParameter("fp rate undefined for m=0".into()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let exponent = -((k as f64) * (n as f64) / (m as f64));
    Ok((1.0 - exponent.exp()).powi(k as i32))
}

/// Optimal sizing for `n` keys at `target_fp`:
/// `m = ceil(-n ln p / (ln 2)^2)`, `k = max(1, round((m/n) ln 2))`.
pub fn size_for(n: u64, target_fp: f64) -> Result<(u64, u32)> {
    if n == 0 {
        return Err(Error::InvalidParameter("size_for needs n >= 1".into()));
    }
    if !(target_fp > 0.0 && target_fp < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "size_for needs 0 < target_fp < 1, got {target_fp}"
        )));
    }
    let ln2 = std::f64::consts::LN_2;
    let m = (-(n as f64) * target_fp.ln() / (ln2 * ln2)).ceil() as u64;
    let k = ((m as f64 / n as f64) * ln2).round().max(1.0) as u32;
    if k > u8::MAX as u32 {
        return Err(Error::InvalidParameter(format!(
            "target_fp {target_fp} needs k={k} hash functions (max 255)"
        )));
    }
    Ok((m, k))
}
