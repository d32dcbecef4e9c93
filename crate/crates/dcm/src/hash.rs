//! Keyed 128-bit hashing (MurmurHash3 x64 variant).
//!
//! Every probabilistic structure in this crate derives its probe positions
//! from one call to [`hash128`], so the whole artifact stays deterministic
//! for a fixed seed and portable across platforms.

const C1: u64 = 0x87c3_7b91_1142_53d5;
const C2: u64 = 0x4cf5_ad43_2745_937f;

#[inline]
fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^= k >> 33;
    k
}

/// MurmurHash3 x64 128-bit with a 64-bit seed. Returns `(h1, h2)`.
pub fn hash128(data: &[u8], seed: u64) -> (u64, u64) {
    let mut h1 = seed;
    let mut h2 = seed;
    let blocks = data.len() / 16;

    for b in 0..blocks {
        let k1 = u64::from_le_bytes(data[b * 16..b * 16 + 8].try_into().unwrap());
        let k2 = u64::from_le_bytes(data[b * 16 + 8..b * 16 + 16].try_into().unwrap());
        h1 ^= k1.wrapping_mul(C1).rotate_left(31).wrapping_mul(C2);
        h1 = h1.rotate_left(27).wrapping_add(h2).wrapping_mul(5).wrapping_add(0x52dc_e729);
        h2 ^= k2.wrapping_mul(C2).rotate_left(33).wrapping_mul(C1);
        h2 = h2.rotate_left(31).wrapping_add(h1).wrapping_mul(5).wrapping_add(0x3849_5ab5);
    }

    let tail = &data[blocks * 16..];
    let mut k1 = 0u64;
    let mut k2 = 0u64;
    for (i, &byte) in tail.iter().enumerate() {
        if i < 8 {
            k1 |= (byte as u64) << (8 * i);
        } else {
            k2 |= (byte as u64) << (8 * (i - 8));
        }
    }
    if tail.len() > 8 {
        h2 ^= k2.wrapping_mul(C2).rotate_left(33).wrapping_mul(C1);
    }
    if !tail.is_empty() {
        h1 ^= k1.wrapping_mul(C1).rotate_left(31).wrapping_mul(C2);
    }

    h1 ^= data.len() as u64;
    h2 ^= data.len() as u64;
    h1 = h1.wrapping_add(h2);
    h2 = h2.wrapping_add(h1);
    h1 = fmix64(h1);
    h2 = fmix64(h2);
    h1 = h1.wrapping_add(h2);
    h2 = h2.wrapping_add(h1);
    (h1, h2)
}

/// Mixes a handful of values into one derived seed.
pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    let mut buf = Vec::with_capacity(parts.len() * 8);
    for p in parts {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    hash128(&buf, 0x6463_6d73_6565_6400).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_seed_zero() {
        assert_eq!(hash128(b"", 0), (0, 0));
    }

    #[test]
    fn reference_vector_foo() {
        // mmh3.hash64("foo") == (-2129773440516405919, 9128664383759220103)
        let (h1, h2) = hash128(b"foo", 0);
        assert_eq!(h1 as i64, -2129773440516405919);
        assert_eq!(h2, 9128664383759220103);
    }

    #[test]
    fn reference_vector_long_input() {
        let (h1, h2) = hash128(b"The quick brown fox jumps over the lazy dog", 0);
        assert_eq!(h1, 0xe34bbc7bbc071b6c);
        assert_eq!(h2, 0x7a433ca9c49a9347);
    }

    #[test]
    fn frozen_vectors_key_lengths() {
        // 13 and 17 bytes are the flow-key and packet-id wire lengths.
        let key13: Vec<u8> = (0..13).collect();
        assert_eq!(hash128(&key13, 0xdeadbeef), (0xcee7affd320b424b, 0xf314f8f9e3d3e235));
        let key17: Vec<u8> = (0..17).collect();
        assert_eq!(hash128(&key17, 1), (0xda11ef35814e7399, 0x570588bd09ad4baa));
    }

    #[test]
    fn seed_changes_output() {
        assert_ne!(hash128(b"foo", 1), hash128(b"foo", 2));
    }

    #[test]
    fn block_and_tail_paths_differ_per_byte() {
        // 16-byte block plus tail: flipping any byte must change the hash.
        let base = *b"0123456789abcdefXYZ";
        let h = hash128(&base, 7);
        for i in 0..base.len() {
            let mut other = base;
            other[i] ^= 1;
            assert_ne!(hash128(&other, 7), h, "byte {i} did not affect hash");
        }
    }
}
