//! Count-Min sketch over flow keys.
//!
//! `depth` rows of `width` 32-bit counters; an increment bumps one counter
//! per row, a query takes the minimum. Estimates never fall below the true
//! count, and with width `ceil(e/eps)` the overestimate exceeds `eps * N`
//! with probability at most `e^-depth`.

use crate::error::Error;
use crate::hash::hash128;
use crate::Result;

/// Default number of rows; keeps the tail probability near `e^-4 ~ 1.8%`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMinSketch {
    depth: u32,
    width: usize,
    /// Row-major `depth * width` counters.
    counters: Vec<u32>,
    seed: u64,
    saturated: bool,
    total: u64,
}

impl CountMinSketch {
    /// Fits the sketch into `memory_bytes`: `width = memory_bytes / (4 * depth)`.
    pub fn new(memory_bytes: u64, depth: u32, seed: u64) -> Result<CountMinSketch> {
        if depth == 0 {
            return Err(Error::InvalidParameter("sketch needs depth >= 1".into()));
        }
        let width = memory_bytes / (4 * depth as u64);
        if width == 0 {
            return Err(Error::InvalidParameter(format!(
                "{memory_bytes} bytes cannot hold a depth-{depth} sketch"
            )));
        }
        CountMinSketch::with_dimensions(depth, width as usize, seed)
    }

    pub fn with_dimensions(depth: u32, width: usize, seed: u64) -> Result<CountMinSketch> {
        if depth == 0 || width == 0 {
            return Err(Error::InvalidParameter("sketch needs depth, width >= 1".into()));
        }
        Ok(CountMinSketch {
            depth,
            width,
            counters: vec![0; depth as usize * width],
            seed,
            saturated: false,
            total: 0,
        })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn memory_bytes(&self) -> u64 {
        4 * self.depth as u64 * self.width as u64
    }

    /// True once any counter has hit the u32 ceiling; estimates may be
    /// clipped from that point on.
    pub fn saturated(&self) -> bool {
        self.saturated
    }

    #[inline]
    fn cell(&self, row: u32, key: &[u8]) -> usize {
        // Row hash family: the shared keyed hash, seeded per row.
        let (h, _) = hash128(key, self.seed.wrapping_add(row as u64));
        row as usize * self.width + (h % self.width as u64) as usize
    }

    pub fn increment(&mut self, key: &[u8], delta: u32) {
        for row in 0..self.depth {
            let idx = self.cell(row, key);
            let (v, overflow) = self.counters[idx].overflowing_add(delta);
            if overflow {
                self.counters[idx] = u32::MAX;
                self.saturated = true;
            } else {
                self.counters[idx] = v;
            }
        }
        self.total += delta as u64;
    }

    /// Minimum over the key's row counters.
    pub fn query(&self, key: &[u8]) -> u32 {
        (0..self.depth).map(|row| self.counters[self.cell(row, key)]).min().unwrap()
    }

    /// Total of all increments applied, independent of counter collisions.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Folds `other` in cell by cell, as if its increments had been applied
    /// here too. Panics unless the two sketches share geometry and seed.
    pub fn absorb(&mut self, other: &CountMinSketch) {
        assert!(
            self.depth == other.depth && self.width == other.width && self.seed == other.seed,
            "absorb needs identical sketch geometry and seed"
        );
        for (a, &b) in self.counters.iter_mut().zip(&other.counters) {
            *a = match a.checked_add(b) {
                Some(v) => v,
                None => {
                    self.saturated = true;
                    u32::MAX
                }
            };
        }
        self.total += other.total;
        self.saturated |= other.saturated;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowKey;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;
    use std::net::Ipv4Addr;

    fn flow(i: u32) -> FlowKey {
        FlowKey::new(
            Ipv4Addr::from(0x0a000000 | i),
            Ipv4Addr::new(10, 255, 0, 1),
            1024,
            443,
            17,
        )
    }

    #[test]
    fn empty_sketch_reads_zero() {
        let s = CountMinSketch::new(1 << 16, 4, 1).unwrap();
        assert_eq!(s.query(&flow(1).wire_bytes()), 0);
    }

    #[test]
    fn lone_flow_counted_exactly() {
        let mut s = CountMinSketch::new(1 << 16, 4, 1).unwrap();
        let key = flow(9).wire_bytes();
        for _ in 0..7 {
            s.increment(&key, 1);
        }
        assert_eq!(s.query(&key), 7);
    }

    #[test]
    fn width_follows_memory_budget() {
        let s = CountMinSketch::new(1600, 4, 0).unwrap();
        assert_eq!(s.width(), 100);
        assert_eq!(s.memory_bytes(), 1600);
    }

    #[test]
    fn too_small_memory_rejected() {
        assert!(CountMinSketch::new(15, 4, 0).is_err());
        assert!(CountMinSketch::new(1 << 10, 0, 0).is_err());
    }

    #[test]
    fn never_underestimates() {
        // Cramped geometry so collisions actually happen.
        let mut s = CountMinSketch::with_dimensions(4, 64, 7).unwrap();
        let mut truth: HashMap<u32, u32> = HashMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20_000 {
            let f = rng.gen_range(0..500u32);
            s.increment(&flow(f).wire_bytes(), 1);
            *truth.entry(f).or_default() += 1;
        }
        for (f, &count) in &truth {
            assert!(s.query(&flow(*f).wire_bytes()) >= count, "underestimated flow {f}");
        }
    }

    #[test]
    fn increments_saturate_and_raise_flag() {
        let mut s = CountMinSketch::with_dimensions(2, 8, 3).unwrap();
        let key = flow(1).wire_bytes();
        s.increment(&key, u32::MAX);
        assert!(!s.saturated());
        s.increment(&key, 1);
        assert!(s.saturated());
        assert_eq!(s.query(&key), u32::MAX);
    }

    #[test]
    fn order_of_increments_is_irrelevant() {
        let mut stream: Vec<u32> = (0..2000).map(|i| i % 97).collect();
        let mut a = CountMinSketch::with_dimensions(4, 128, 5).unwrap();
        for &f in &stream {
            a.increment(&flow(f).wire_bytes(), 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        stream.shuffle(&mut rng);
        let mut b = CountMinSketch::with_dimensions(4, 128, 5).unwrap();
        for &f in &stream {
            b.increment(&flow(f).wire_bytes(), 1);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn mean_overestimate_grows_with_load() {
        // Counters only ever increment, so each flow's overestimate (min over
        // rows of collision mass) is non-decreasing in stream length; the mean
        // over a fixed universe must be too.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let stream: Vec<u32> = (0..40_000).map(|_| rng.gen_range(0..800u32)).collect();
        let mut s = CountMinSketch::with_dimensions(4, 256, 9).unwrap();
        let mut truth: HashMap<u32, u32> = HashMap::new();
        let mut last_mean = -1.0f64;
        for (i, &f) in stream.iter().enumerate() {
            s.increment(&flow(f).wire_bytes(), 1);
            *truth.entry(f).or_default() += 1;
            if (i + 1) % 10_000 == 0 {
                let total: f64 = (0..800u32)
                    .map(|f| {
                        let est = s.query(&flow(f).wire_bytes());
                        let count = truth.get(&f).copied().unwrap_or(0);
                        (est - count) as f64
                    })
                    .sum();
                let mean = total / 800.0;
                assert!(mean >= last_mean, "overestimate shrank: {last_mean} -> {mean}");
                last_mean = mean;
            }
        }
        assert!(last_mean > 0.0, "stream never collided; test is vacuous");
    }

    #[test]
    fn total_tracks_increments() {
        let mut s = CountMinSketch::with_dimensions(2, 16, 1).unwrap();
        assert_eq!(s.total(), 0);
        s.increment(&flow(1).wire_bytes(), 3);
        s.increment(&flow(2).wire_bytes(), 4);
        assert_eq!(s.total(), 7);
    }

    #[test]
    fn absorb_equals_combined_stream() {
        let mut a = CountMinSketch::with_dimensions(3, 64, 2).unwrap();
        let mut b = CountMinSketch::with_dimensions(3, 64, 2).unwrap();
        let mut both = CountMinSketch::with_dimensions(3, 64, 2).unwrap();
        for i in 0..200u32 {
            let key = flow(i % 40).wire_bytes();
            if i % 2 == 0 {
                a.increment(&key, 1);
            } else {
                b.increment(&key, 1);
            }
            both.increment(&key, 1);
        }
        a.absorb(&b);
        assert_eq!(a, both);
    }

    #[test]
    #[should_panic(expected = "geometry")]
    fn absorb_rejects_mismatched_geometry() {
        let mut a = CountMinSketch::with_dimensions(2, 16, 1).unwrap();
        let b = CountMinSketch::with_dimensions(2, 32, 1).unwrap();
        a.absorb(&b);
    }
}
