//! Multi-rate packet sampling on dyadic intervals.
//!
//! A sampling rate is a dyadic rational `numerator / 2^precision_bits`. Its
//! binary expansion picks a set of interval actions: bit t (counting from the
//! binary point) maps to action t, which samples exactly the packets whose
//! hash lands in `[2^-t, 2^-(t-1))`. The intervals are pairwise disjoint, so
//! however the actions are spread over switches, no packet is sampled twice
//! and the per-flow rates still add up exactly.

use crate::error::Error;
use crate::flow::PacketId;
use crate::hash::hash128;
use crate::Result;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleRate {
    numerator: u32,
    precision_bits: u8,
}

impl SampleRate {
    pub fn new(numerator: u32, precision_bits: u8) -> Result<SampleRate> {
        if precision_bits == 0 || precision_bits > 32 {
            return Err(Error::InvalidParameter(format!(
                "precision_bits {precision_bits} out of range 1..=32"
            )));
        }
        if numerator == 0 || (numerator as u64) >= (1u64 << precision_bits) {
            return Err(Error::InvalidParameter(format!(
                "rate numerator {numerator} out of range 1..2^{precision_bits}"
            )));
        }
        Ok(SampleRate { numerator, precision_bits })
    }

    pub fn numerator(&self) -> u32 {
        self.numerator
    }

    pub fn precision_bits(&self) -> u8 {
        self.precision_bits
    }

    /// Exact value in (0, 1); dyadic rationals are representable in f64.
    pub fn value(&self) -> f64 {
        self.numerator as f64 / (1u64 << self.precision_bits) as f64
    }
}

impl fmt::Display for SampleRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, 1u64 << self.precision_bits)
    }
}

impl FromStr for SampleRate {
    type Err = Error;

    /// Parses `numerator/denominator` with a power-of-two denominator.
    fn from_str(s: &str) -> Result<SampleRate> {
        let bad = || Error::InvalidParameter(format!("bad sample rate {s:?}, want e.g. 11/16"));
        let (num, den) = s.split_once('/').ok_or_else(bad)?;
        let num: u32 = num.trim().parse().map_err(|_| bad())?;
        let den: u64 = den.trim().parse().map_err(|_| bad())?;
        if !den.is_power_of_two() || den < 2 {
            return Err(Error::InvalidParameter(format!(
                "sample rate denominator {den} must be a power of two >= 2"
            )));
        }
        SampleRate::new(num, den.trailing_zeros() as u8)
    }
}

/// Interval actions selected by the rate's binary expansion: action `t` is in
/// the set iff bit `t` after the binary point is 1. `11/16 = 0.1011` selects
/// `{1, 3, 4}`.
pub fn rate_to_actions(rate: SampleRate) -> Vec<u8> {
    let bits = rate.precision_bits();
    (1..=bits)
        .filter(|t| (rate.numerator() >> (bits - t)) & 1 == 1)
        .collect()
}

/// Hash interval of action `i`: `[2^-i, 2^-(i-1))`.
pub fn action_interval(i: u8) -> (f64, f64) {
    assert!(i >= 1, "interval actions are numbered from 1");
    (2f64.powi(-(i as i32)), 2f64.powi(-(i as i32 - 1)))
}

/// Whether a packet with hash `h` belongs to interval action `i`.
pub fn should_sample(i: u8, h: f64) -> bool {
    let (lo, hi) = action_interval(i);
    lo <= h && h < hi
}

/// Keyed packet hash mapped to [0, 1). All switches must share the seed so
/// that their interval decisions partition the same hash space.
pub fn packet_hash(p: &PacketId, seed: u64) -> f64 {
    let (h, _) = hash128(&p.wire_bytes(), seed);
    // Top 53 bits: exact in f64 and strictly below 1.0.
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
