use std::fmt;

use crate::error::{Error, Result};

/// Signed Q16.16 fixed-point number: `raw / 2^16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Q16(pub i32);

const FRAC: u32 = 16;
const SCALE: f64 = 65536.0;

impl Q16 {
    pub const ZERO: Q16 = Q16(0);
    pub const ONE: Q16 = Q16(1 << FRAC);
    pub const MIN: Q16 = Q16(i32::MIN);
    pub const MAX: Q16 = Q16(i32::MAX);

    /// Round to nearest (ties away from zero), saturating at the range ends.
    pub fn from_f64(x: f64) -> Q16 {
        if x.is_nan() {
            return Q16::ZERO;
        }
        Q16(saturate((x * SCALE).round() as i64))
    }

    /// Like [`from_f64`](Self::from_f64) but fails instead of saturating.
    pub fn try_from_f64(x: f64, name: &str) -> Result<Q16> {
        let r = (x * SCALE).round();
        if !r.is_finite() || r < i32::MIN as f64 || r > i32::MAX as f64 {
            return Err(Error::FixedPointRange {
                name: name.to_string(),
                value: x,
            });
        }
        Ok(Q16(r as i32))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE
    }

    pub fn raw(self) -> i32 {
        self.0
    }
}

impl fmt::Display for Q16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

#[inline]
pub(crate) fn saturate(v: i64) -> i32 {
    v.clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

/// Shifts right by 16 rounding to nearest, ties away from zero.
#[inline]
pub(crate) fn round_shift(v: i128) -> i64 {
    let half = 1i128 << (FRAC - 1);
    let r = if v >= 0 {
        (v + half) >> FRAC
    } else {
        -((-v + half) >> FRAC)
    };
    r.clamp(i64::MIN as i128, i64::MAX as i128) as i64
}

pub fn to_fixed(x: f64) -> Q16 {
    Q16::from_f64(x)
}

pub fn from_fixed(q: Q16) -> f64 {
    q.to_f64()
}

/// Saturating addition.
#[inline]
pub fn q_add(a: Q16, b: Q16) -> Q16 {
    Q16(a.0.saturating_add(b.0))
}

#[inline]
pub fn q_sub(a: Q16, b: Q16) -> Q16 {
    Q16(a.0.saturating_sub(b.0))
}

/// Product through a 64-bit intermediate, rounded and saturated.
#[inline]
pub fn q_mul(a: Q16, b: Q16) -> Q16 {
    Q16(saturate(round_shift(a.0 as i128 * b.0 as i128)))
}
