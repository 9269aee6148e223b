//! Numeric formats, the fixed-point codec, bit-flip mutation and the clip
//! primitive.
//!
//! Values travel through the engine as `f64` holding the exact decoded value
//! of the active [`NumericFormat`]. Every `f32` is exactly representable in
//! `f64`, and so is every Q-format value up to 32 bits, so the decoded form
//! is lossless and [`encode`] recovers the raw bit pattern exactly.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fractional bits used by the 16-bit format unless overridden.
pub const FIXED16_DEFAULT_FRAC: u8 = 2;
/// Fractional bits used by the 32-bit format unless overridden (Q21.10).
pub const FIXED32_DEFAULT_FRAC: u8 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("bit position {position} out of range for {width}-bit format")]
    BitOutOfRange { position: u32, width: u32 },
    #[error("bit position {0} listed more than once")]
    DuplicateBit(u32),
    #[error("clip bounds inverted: low {low} > up {up}")]
    InvertedBounds { low: f64, up: f64 },
    #[error("invalid numeric format: {0}")]
    InvalidFormat(String),
}

/// Datapath format of operator outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NumericFormat {
    Float32,
    /// Two's-complement Q-format with `total_bits - frac_bits - 1` integer bits.
    Fixed { total_bits: u8, frac_bits: u8 },
}

impl NumericFormat {
    pub fn fixed16() -> Self {
        NumericFormat::Fixed {
            total_bits: 16,
            frac_bits: FIXED16_DEFAULT_FRAC,
        }
    }

    pub fn fixed32() -> Self {
        NumericFormat::Fixed {
            total_bits: 32,
            frac_bits: FIXED32_DEFAULT_FRAC,
        }
    }

    pub fn fixed(total_bits: u8, frac_bits: u8) -> Result<Self, NumericError> {
        if total_bits != 16 && total_bits != 32 {
            return Err(NumericError::InvalidFormat(format!(
                "fixed-point width must be 16 or 32, got {total_bits}"
            )));
        }
        if frac_bits >= total_bits {
            return Err(NumericError::InvalidFormat(format!(
                "{frac_bits} fractional bits leave no room in {total_bits} bits"
            )));
        }
        Ok(NumericFormat::Fixed {
            total_bits,
            frac_bits,
        })
    }

    pub fn width(&self) -> u32 {
        match *self {
            NumericFormat::Float32 => 32,
            NumericFormat::Fixed { total_bits, .. } => u32::from(total_bits),
        }
    }

    /// Bit positions holding integer magnitude (excludes fraction and sign).
    /// For float32 this is the exponent field.
    pub fn integer_bits(&self) -> std::ops::Range<u32> {
        match *self {
            NumericFormat::Float32 => 23..31,
            NumericFormat::Fixed {
                total_bits,
                frac_bits,
            } => u32::from(frac_bits)..u32::from(total_bits) - 1,
        }
    }

    /// Smallest and largest representable values.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            NumericFormat::Float32 => (f64::from(f32::MIN), f64::from(f32::MAX)),
            NumericFormat::Fixed {
                total_bits,
                frac_bits,
            } => {
                let scale = 2f64.powi(i32::from(frac_bits));
                let max_raw = (1i64 << (total_bits - 1)) - 1;
                let min_raw = -(1i64 << (total_bits - 1));
                (min_raw as f64 / scale, max_raw as f64 / scale)
            }
        }
    }

    /// Rounds and saturates `value` onto this format's grid.
    pub fn quantize(&self, value: f64) -> f64 {
        match *self {
            NumericFormat::Float32 => f64::from(value as f32),
            NumericFormat::Fixed { .. } => decode(encode(value, *self), *self),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, NumericFormat::Fixed { .. })
    }
}

impl fmt::Display for NumericFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NumericFormat::Float32 => write!(f, "float32"),
            NumericFormat::Fixed {
                total_bits,
                frac_bits,
            } => {
                let default_frac = if total_bits == 16 {
                    FIXED16_DEFAULT_FRAC
                } else {
                    FIXED32_DEFAULT_FRAC
                };
                if frac_bits == default_frac {
                    write!(f, "fixed{total_bits}")
                } else {
                    write!(f, "fixed{total_bits}.{frac_bits}")
                }
            }
        }
    }
}

impl FromStr for NumericFormat {
    type Err = NumericError;

    /// Accepts `float32`, `fixed16`, `fixed32`, or `fixedN.F` with an explicit
    /// fractional width.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "float32" | "f32" => return Ok(NumericFormat::Float32),
            "fixed16" => return Ok(NumericFormat::fixed16()),
            "fixed32" => return Ok(NumericFormat::fixed32()),
            _ => {}
        }
        let rest = s
            .strip_prefix("fixed")
            .ok_or_else(|| NumericError::InvalidFormat(s.to_string()))?;
        let (total, frac) = rest
            .split_once('.')
            .ok_or_else(|| NumericError::InvalidFormat(s.to_string()))?;
        let total: u8 = total
            .parse()
            .map_err(|_| NumericError::InvalidFormat(s.to_string()))?;
        let frac: u8 = frac
            .parse()
            .map_err(|_| NumericError::InvalidFormat(s.to_string()))?;
        NumericFormat::fixed(total, frac)
    }
}

/// Encodes `value` as the raw bit pattern of `format` (low `width` bits).
///
/// Fixed-point rounds half away from zero and saturates at the range ends.
/// NaN encodes to 0 in fixed point.
pub fn encode(value: f64, format: NumericFormat) -> u32 {
    match format {
        NumericFormat::Float32 => (value as f32).to_bits(),
        NumericFormat::Fixed {
            total_bits,
            frac_bits,
        } => {
            let raw = fixed_raw(value, total_bits, frac_bits);
            let mask = if total_bits == 32 {
                u32::MAX
            } else {
                (1u32 << total_bits) - 1
            };
            (raw as u32) & mask
        }
    }
}

/// Saturating signed raw integer for a fixed-point value.
pub(crate) fn fixed_raw(value: f64, total_bits: u8, frac_bits: u8) -> i64 {
    if value.is_nan() {
        return 0;
    }
    let max_raw = (1i64 << (total_bits - 1)) - 1;
    let min_raw = -(1i64 << (total_bits - 1));
    let scaled = (value * 2f64.powi(i32::from(frac_bits))).round();
    if scaled >= max_raw as f64 {
        max_raw
    } else if scaled <= min_raw as f64 {
        min_raw
    } else {
        scaled as i64
    }
}

pub fn decode(raw: u32, format: NumericFormat) -> f64 {
    match format {
        NumericFormat::Float32 => f64::from(f32::from_bits(raw)),
        NumericFormat::Fixed {
            total_bits,
            frac_bits,
        } => {
            let shift = 32 - u32::from(total_bits);
            let signed = ((raw << shift) as i32) >> shift;
            f64::from(signed) / 2f64.powi(i32::from(frac_bits))
        }
    }
}

/// XORs the listed bit positions into `value`.
pub fn flip_bits(value: u32, positions: &[u32], format: NumericFormat) -> Result<u32, NumericError> {
    let width = format.width();
    let mut mask = 0u32;
    for &position in positions {
        if position >= width {
            return Err(NumericError::BitOutOfRange { position, width });
        }
        let bit = 1u32 << position;
        if mask & bit != 0 {
            return Err(NumericError::DuplicateBit(position));
        }
        mask |= bit;
    }
    Ok(value ^ mask)
}

/// Flips bits of an already-decoded value and returns the decoded result.
pub fn flip_value(value: f64, positions: &[u32], format: NumericFormat) -> Result<f64, NumericError> {
    let raw = encode(value, format);
    Ok(decode(flip_bits(raw, positions, format)?, format))
}

/// What a range-restriction operator does with an out-of-bound value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CorrectionPolicy {
    /// Saturate to the violated bound.
    ToBound,
    /// Replace with zero.
    ToZero,
    /// Replace with a uniform draw from `[low, up]`.
    RandomInRange { seed: u64 },
}

impl Default for CorrectionPolicy {
    fn default() -> Self {
        CorrectionPolicy::ToBound
    }
}

impl fmt::Display for CorrectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorrectionPolicy::ToBound => write!(f, "to-bound"),
            CorrectionPolicy::ToZero => write!(f, "to-zero"),
            CorrectionPolicy::RandomInRange { seed } => write!(f, "random(seed={seed})"),
        }
    }
}

/// Range restriction of a single value. NaN passes through unchanged.
pub fn clip<R: Rng + ?Sized>(
    value: f64,
    low: f64,
    up: f64,
    policy: CorrectionPolicy,
    rng: &mut R,
) -> Result<f64, NumericError> {
    if low > up {
        return Err(NumericError::InvertedBounds { low, up });
    }
    Ok(clip_unchecked(value, low, up, policy, rng))
}

#[inline]
pub(crate) fn clip_unchecked<R: Rng + ?Sized>(
    value: f64,
    low: f64,
    up: f64,
    policy: CorrectionPolicy,
    rng: &mut R,
) -> f64 {
    if value.is_nan() || (value >= low && value <= up) {
        return value;
    }
    match policy {
        CorrectionPolicy::ToBound => {
            if value < low {
                low
            } else {
                up
            }
        }
        CorrectionPolicy::ToZero => 0.0,
        CorrectionPolicy::RandomInRange { .. } => {
            if low == up {
                low
            } else {
                rng.gen_range(low..=up)
            }
        }
    }
}
