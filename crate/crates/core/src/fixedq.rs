//! k-precision fixed point values.
//!
//! A value `x̄` is stored as the integer mantissa `x̂ = 2^k·x̄`. Quantization
//! floors toward negative infinity; every other operation is exact integer
//! arithmetic on mantissas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported number of fractional bits.
pub const MAX_PRECISION: u32 = 32;

/// Mantissas are kept within `±MANTISSA_LIMIT` so sums and scaled products
/// have headroom in 128-bit intermediates.
pub const MANTISSA_LIMIT: i64 = 1 << 62;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FixedPoint {
    mantissa: i64,
    k: u32,
}

impl FixedPoint {
    pub fn quantize(x: f64, k: u32) -> Result<Self> {
        check_k(k)?;
        Ok(FixedPoint {
            mantissa: quantize_mantissa(x, k)?,
            k,
        })
    }

    pub fn from_integer(n: i64, k: u32) -> Self {
        FixedPoint { mantissa: n, k }
    }

    pub fn to_integer(self) -> i64 {
        self.mantissa
    }

    pub fn k(self) -> u32 {
        self.k
    }

    pub fn to_f64(self) -> f64 {
        mantissa_to_f64(self.mantissa, self.k)
    }

    pub fn floor_integer(self) -> i64 {
        self.mantissa >> self.k
    }

    pub fn fraction_mantissa(self) -> i64 {
        self.mantissa & ((1i64 << self.k) - 1)
    }

    pub fn checked_add(self, other: FixedPoint) -> Result<FixedPoint> {
        same_k(self, other)?;
        let m = self
            .mantissa
            .checked_add(other.mantissa)
            .filter(|m| m.abs() <= MANTISSA_LIMIT)
            .ok_or_else(|| Error::Range("fixed point addition overflow".into()))?;
        Ok(FixedPoint::from_integer(m, self.k))
    }

    pub fn checked_sub(self, other: FixedPoint) -> Result<FixedPoint> {
        same_k(self, other)?;
        self.checked_add(FixedPoint::from_integer(-other.mantissa, other.k))
    }
}

impl std::fmt::Display for FixedPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (2^-{}·{})", self.to_f64(), self.k, self.mantissa)
    }
}

fn same_k(a: FixedPoint, b: FixedPoint) -> Result<()> {
    if a.k != b.k {
        return Err(Error::Parameter(format!(
            "precision mismatch: k={} vs k={}",
            a.k, b.k
        )));
    }
    Ok(())
}

fn check_k(k: u32) -> Result<()> {
    if k > MAX_PRECISION {
        return Err(Error::Parameter(format!("k={k} exceeds {MAX_PRECISION}")));
    }
    Ok(())
}

/// `⌊2^k·x⌋` as an integer mantissa.
pub fn quantize_mantissa(x: f64, k: u32) -> Result<i64> {
    if !x.is_finite() {
        return Err(Error::Range(format!("cannot quantize non-finite {x}")));
    }
    // scaling by a power of two is exact, so the floor is the only rounding
    let v = (x * pow2(k)).floor();
    if v.abs() > MANTISSA_LIMIT as f64 {
        return Err(Error::Range(format!("{x} at k={k} overflows the mantissa")));
    }
    Ok(v as i64)
}

/// Like [`quantize_mantissa`] but saturates into `[lo, hi]`; NaN maps to `lo`.
pub(crate) fn quantize_clamped(x: f64, k: u32, lo: i64, hi: i64) -> i64 {
    let v = (x * pow2(k)).floor();
    if v.is_nan() || v <= lo as f64 {
        lo
    } else if v >= hi as f64 {
        hi
    } else {
        v as i64
    }
}

pub fn mantissa_to_f64(m: i64, k: u32) -> f64 {
    m as f64 / pow2(k)
}

pub(crate) fn pow2(k: u32) -> f64 {
    f64::from_bits(((1023 + k as u64) & 0x7ff) << 52)
}

/// Precision and interpolation settings shared by every flow layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Precision {
    /// fractional bits of every quantized value
    pub k: u32,
    /// interpolation grid bits
    pub h: u32,
    /// MST denominator
    pub s: u64,
    /// number of splits used to lower auxiliary bits
    pub b: u32,
}

impl Default for Precision {
    fn default() -> Self {
        Precision {
            k: 28,
            h: 12,
            s: 1 << 16,
            b: 4,
        }
    }
}

impl Precision {
    pub fn new(k: u32, h: u32, s: u64, b: u32) -> Result<Self> {
        let p = Precision { k, h, s, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_k(self.k)?;
        if self.h >= self.k {
            return Err(Error::Parameter(format!(
                "grid bits h={} must be below k={}",
                self.h, self.k
            )));
        }
        if self.s < 2 || self.s >= 1 << 31 {
            return Err(Error::Parameter(format!(
                "denominator S={} must lie in [2, 2^31)",
                self.s
            )));
        }
        if self.b == 0 {
            return Err(Error::Parameter("split count b must be at least 1".into()));
        }
        Ok(())
    }

    /// Mantissa width of one grid cell, `2^(k-h)`.
    pub fn cell_width(&self) -> i64 {
        1i64 << (self.k - self.h)
    }

    /// Indices of the elements in split `g` when `n` elements are dealt
    /// round-robin into `b` splits.
    pub fn split_indices(&self, g: usize, n: usize) -> impl Iterator<Item = usize> {
        (g..n).step_by(self.b as usize)
    }
}
