//! Fixed-point primitives shared by the quantizer and the integer engine.
//!
//! All rounding is half-away-from-zero. Saturation clamps into the signed
//! range of an [`FxFormat`]. Accumulators are exact and report overflow
//! instead of wrapping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Widest storage format the engine accepts.
pub const MAX_STORAGE_BITS: u32 = 32;

/// Default accumulator width of a MAC lane.
pub const DEFAULT_ACC_BITS: u32 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FxError {
    #[error("cannot round non-finite value {0}")]
    NonFinite(String),
    #[error("invalid fixed-point format: {n_bits} total bits (allowed 2..={max})", max = MAX_STORAGE_BITS)]
    BadFormat { n_bits: u32 },
    #[error("invalid accumulator width {0} (allowed 2..=64)")]
    BadWidth(u32),
    #[error("accumulator overflow: {value} does not fit in {width} signed bits")]
    AccumulatorOverflow { value: i128, width: u32 },
}

/// Signed two's-complement storage format.
///
/// `n_bits` counts the sign bit. Weights and activations normalized to
/// [-1, 1) use `frac_bits = n_bits - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FxFormat {
    n_bits: u32,
    frac_bits: u32,
}

impl FxFormat {
    pub fn new(n_bits: u32, frac_bits: u32) -> Result<Self, FxError> {
        if !(2..=MAX_STORAGE_BITS).contains(&n_bits) || frac_bits >= n_bits {
            return Err(FxError::BadFormat { n_bits });
        }
        Ok(Self { n_bits, frac_bits })
    }

    /// Storage for `magnitude_bits` magnitude bits plus one sign bit.
    pub fn signed_magnitude(magnitude_bits: u32) -> Result<Self, FxError> {
        Self::new(magnitude_bits + 1, magnitude_bits)
    }

    pub fn n_bits(&self) -> u32 {
        self.n_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn min_value(&self) -> i64 {
        -(1i64 << (self.n_bits - 1))
    }

    pub fn max_value(&self) -> i64 {
        (1i64 << (self.n_bits - 1)) - 1
    }

    pub fn contains(&self, v: i64) -> bool {
        (self.min_value()..=self.max_value()).contains(&v)
    }
}

/// Round to the nearest integer, ties away from zero.
pub fn round_nearest(x: f64) -> Result<i64, FxError> {
    if !x.is_finite() {
        return Err(FxError::NonFinite(x.to_string()));
    }
    // f64::round already breaks ties away from zero.
    let r = x.round();
    if r >= i64::MAX as f64 || r < i64::MIN as f64 {
        return Err(FxError::NonFinite(x.to_string()));
    }
    Ok(r as i64)
}

pub fn saturate(v: i128, fmt: FxFormat) -> i64 {
    v.clamp(fmt.min_value() as i128, fmt.max_value() as i128) as i64
}

/// Exact MAC accumulation register of a fixed width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accumulator {
    value: i64,
    width: u32,
}

impl Accumulator {
    pub fn new(width: u32) -> Result<Self, FxError> {
        if !(2..=64).contains(&width) {
            return Err(FxError::BadWidth(width));
        }
        Ok(Self { value: 0, width })
    }

    pub fn with_value(value: i64, width: u32) -> Result<Self, FxError> {
        let acc = Self::new(width)?;
        acc.checked(value as i128)
    }

    pub fn value(&self) -> i64 {
        self.value
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    fn checked(self, v: i128) -> Result<Self, FxError> {
        let hi = (1i128 << (self.width - 1)) - 1;
        let lo = -(1i128 << (self.width - 1));
        if v < lo || v > hi {
            return Err(FxError::AccumulatorOverflow {
                value: v,
                width: self.width,
            });
        }
        Ok(Self {
            value: v as i64,
            width: self.width,
        })
    }
}

/// `acc + a * b`, computed exactly; errors if the result leaves the register.
pub fn mac(acc: Accumulator, a: i64, b: i64) -> Result<Accumulator, FxError> {
    let v = acc.value as i128 + a as i128 * b as i128;
    acc.checked(v)
}

/// Divide by `2^shift`, rounding half away from zero.
pub fn shift_round(v: i128, shift: u32) -> i128 {
    if shift == 0 {
        return v;
    }
    let half = 1i128 << (shift - 1);
    let mag = (v.abs() + half) >> shift;
    if v < 0 {
        -mag
    } else {
        mag
    }
}

/// Output stage of a MAC stream: scale by `mult / 2^shift`, round, optional
/// ReLU, then saturate into `fmt`.
pub fn requantize(acc: Accumulator, mult: i64, shift: u32, fmt: FxFormat, relu: bool) -> i64 {
    debug_assert!(mult >= 1);
    let scaled = shift_round(acc.value as i128 * mult as i128, shift);
    let scaled = if relu { scaled.max(0) } else { scaled };
    saturate(scaled, fmt)
}

/// Approximate a positive real factor as `mult / 2^shift` with `mult` in
/// `[2^(mantissa_bits-1), 2^mantissa_bits)`.
///
/// Relative error is below `2^-mantissa_bits`.
pub fn factor_to_mult_shift(factor: f64, mantissa_bits: u32) -> Option<(i64, u32)> {
    if !(factor.is_finite() && factor > 0.0) {
        return None;
    }
    let lo = (1i64 << (mantissa_bits - 1)) as f64;
    let mut shift: i32 = 0;
    let mut m = factor;
    while m < lo {
        m *= 2.0;
        shift += 1;
    }
    while m >= 2.0 * lo {
        m /= 2.0;
        shift -= 1;
    }
    if shift < 0 || shift > 120 {
        return None;
    }
    let mut mult = m.round() as i64;
    if mult == 1i64 << mantissa_bits {
        // rounding carried into the next binade
        mult >>= 1;
        shift -= 1;
        if shift < 0 {
            return None;
        }
    }
    Some((mult, shift as u32))
}
