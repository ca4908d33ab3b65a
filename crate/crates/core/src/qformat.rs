// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! Signed 8-bit fixed-point storage with a 16-bit saturating accumulator.
//!
//! All values are stored as 8-bit two's-complement codes with a per-tensor
//! number of fractional bits. Products of two codes land in an [`Acc16`]
//! whose scale is the sum of the operand scales. Every overflow clamps to
//! the extreme code of the destination width; nothing ever wraps.
//!
//! Rounding is round-half-away-from-zero everywhere (quantization and
//! right shifts), so a reimplementation with wide integers and explicit
//! clamps reproduces every result bit for bit.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Storage width of every state, gate, weight and bias code.
pub const STORAGE_BITS: u32 = 8;
/// Width of the multiply-accumulate register.
pub const ACC_BITS: u32 = 16;

pub const CODE_MIN: i32 = i8::MIN as i32;
pub const CODE_MAX: i32 = i8::MAX as i32;
pub const ACC_MIN: i32 = i16::MIN as i32;
pub const ACC_MAX: i32 = i16::MAX as i32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("fractional bits must be in 0..=7, got {0}")]
    FracBits(u8),
    #[error("format mismatch: expected Q{expected}, got Q{actual}")]
    Mismatch { expected: QFormat, actual: QFormat },
    #[error("cannot requantize accumulator with {acc} fractional bits to a format with {target}")]
    Upscale { acc: u8, target: u8 },
}

/// An 8-bit signed Q-format descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct QFormat {
    frac_bits: u8,
}

impl QFormat {
    /// Q2.5: states, inputs, weights and biases.
    pub const Q2_5: Self = Self { frac_bits: 5 };
    /// Q0.7: sigmoid and tanh outputs.
    pub const Q0_7: Self = Self { frac_bits: 7 };

    pub fn new(frac_bits: u8) -> Result<Self, FormatError> {
        if frac_bits as u32 >= STORAGE_BITS {
            return Err(FormatError::FracBits(frac_bits));
        }
        Ok(Self { frac_bits })
    }

    pub const fn frac_bits(self) -> u8 {
        self.frac_bits
    }

    pub const fn int_bits(self) -> u8 {
        (STORAGE_BITS as u8 - 1) - self.frac_bits
    }

    /// Weight of one code step.
    pub fn lsb(self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn min_value(self) -> f64 {
        CODE_MIN as f64 * self.lsb()
    }

    pub fn max_value(self) -> f64 {
        CODE_MAX as f64 * self.lsb()
    }
}

impl TryFrom<u8> for QFormat {
    type Error = FormatError;
    fn try_from(v: u8) -> Result<Self, FormatError> {
        Self::new(v)
    }
}

impl From<QFormat> for u8 {
    fn from(f: QFormat) -> u8 {
        f.frac_bits
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.int_bits(), self.frac_bits)
    }
}

/// One 8-bit code tagged with its format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Q8 {
    pub code: i8,
    pub format: QFormat,
}

impl Q8 {
    pub const fn new(code: i8, format: QFormat) -> Self {
        Self { code, format }
    }

    pub fn to_f64(self) -> f64 {
        dequantize(self)
    }
}

/// 16-bit accumulator. `frac_bits` may exceed 7 since products carry the
/// sum of both operand scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Acc16 {
    pub value: i16,
    pub frac_bits: u8,
    /// Set once any operation feeding this value had to clamp.
    pub saturated: bool,
}

impl Acc16 {
    pub const fn zero(frac_bits: u8) -> Self {
        Self { value: 0, frac_bits, saturated: false }
    }

    pub const fn new(value: i16, frac_bits: u8) -> Self {
        Self { value, frac_bits, saturated: false }
    }

    /// Product of two codes, exact (|a·b| ≤ 2^14 always fits).
    pub fn product(a: Q8, b: Q8) -> Self {
        let p = a.code as i32 * b.code as i32;
        Self::new(p as i16, a.format.frac_bits + b.format.frac_bits)
    }

    /// Clamped sum of two accumulators on the same scale.
    pub fn saturating_add(self, other: Acc16) -> Self {
        debug_assert_eq!(self.frac_bits, other.frac_bits, "accumulator scales differ");
        let (value, clamped) = saturate16(self.value as i32 + other.value as i32);
        Self {
            value,
            frac_bits: self.frac_bits,
            saturated: self.saturated || other.saturated || clamped,
        }
    }

    /// Adds a code given at a coarser scale, shifting it up to the
    /// accumulator scale first (bias terms).
    pub fn add_code(self, q: Q8) -> Self {
        let shift = self.frac_bits as i32 - q.format.frac_bits as i32;
        let aligned = if shift >= 0 {
            (q.code as i32) << shift
        } else {
            round_shift_right(q.code as i32, (-shift) as u32)
        };
        let (value, clamped) = saturate16(self.value as i32 + aligned);
        Self { value, frac_bits: self.frac_bits, saturated: self.saturated || clamped }
    }

    /// Moves the value to a smaller number of fractional bits with
    /// rounding (or to a larger one with an exact, clamped left shift).
    pub fn rescale(self, frac_bits: u8) -> Self {
        let v = self.value as i32;
        let shifted = if frac_bits <= self.frac_bits {
            round_shift_right(v, (self.frac_bits - frac_bits) as u32)
        } else {
            v << (frac_bits - self.frac_bits)
        };
        let (value, clamped) = saturate16(shifted);
        Self { value, frac_bits, saturated: self.saturated || clamped }
    }

    pub fn to_f64(self) -> f64 {
        self.value as f64 * (-(self.frac_bits as f64)).exp2()
    }

    /// Little-endian bytes, as the value travels over a link.
    pub fn to_le_bytes(self) -> [u8; 2] {
        self.value.to_le_bytes()
    }
}

/// Clamps to the 16-bit range and reports whether clamping happened.
pub fn saturate16(v: i32) -> (i16, bool) {
    if v > ACC_MAX {
        (i16::MAX, true)
    } else if v < ACC_MIN {
        (i16::MIN, true)
    } else {
        (v as i16, false)
    }
}

pub fn saturate8(v: i32) -> i8 {
    v.clamp(CODE_MIN, CODE_MAX) as i8
}

/// Arithmetic right shift rounding half away from zero.
pub fn round_shift_right(v: i32, shift: u32) -> i32 {
    if shift == 0 {
        return v;
    }
    let half = 1i64 << (shift - 1);
    let v = v as i64;
    let r = if v >= 0 { (v + half) >> shift } else { -((-v + half) >> shift) };
    r as i32
}

/// `clamp(round_half_away(v · 2^frac), -128, 127)`. NaN maps to zero.
pub fn quantize(v: f64, fmt: QFormat) -> Q8 {
    if v.is_nan() {
        return Q8::new(0, fmt);
    }
    let scaled = (v * (fmt.frac_bits as f64).exp2()).round();
    let code = scaled.clamp(CODE_MIN as f64, CODE_MAX as f64) as i8;
    Q8::new(code, fmt)
}

pub fn dequantize(q: Q8) -> f64 {
    q.code as f64 * q.format.lsb()
}

/// One multiply-accumulate step of the datapath: `sat16(acc + a·b)`.
pub fn mac(acc: Acc16, a: Q8, b: Q8) -> Acc16 {
    debug_assert_eq!(
        acc.frac_bits,
        a.format.frac_bits + b.format.frac_bits,
        "product scale does not match accumulator"
    );
    let (value, clamped) = saturate16(acc.value as i32 + a.code as i32 * b.code as i32);
    Acc16 { value, frac_bits: acc.frac_bits, saturated: acc.saturated || clamped }
}

/// 16 → 8 bit reduction: rounded right shift then clamp.
pub fn requantize(acc: Acc16, target: QFormat) -> Result<Q8, FormatError> {
    if acc.frac_bits < target.frac_bits {
        return Err(FormatError::Upscale { acc: acc.frac_bits, target: target.frac_bits });
    }
    let shifted = round_shift_right(acc.value as i32, (acc.frac_bits - target.frac_bits) as u32);
    Ok(Q8::new(saturate8(shifted), target))
}

/// Checks that `q` carries the format an operand role expects.
pub fn expect_format(q: Q8, expected: QFormat) -> Result<(), FormatError> {
    if q.format == expected {
        Ok(())
    } else {
        Err(FormatError::Mismatch { expected, actual: q.format })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(code: i8, f: QFormat) -> Q8 {
        Q8::new(code, f)
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.0, QFormat::Q2_5).code, 0);
        assert_eq!(quantize(0.5, QFormat::Q2_5).code, 16);
        assert_eq!(quantize(10.0, QFormat::Q2_5).code, 127);
        assert_eq!(quantize(-10.0, QFormat::Q2_5).code, -128);
        assert_eq!(quantize(f64::NAN, QFormat::Q2_5).code, 0);
        // ties go away from zero
        assert_eq!(quantize(1.5 / 32.0, QFormat::Q2_5).code, 2);
        assert_eq!(quantize(-1.5 / 32.0, QFormat::Q2_5).code, -2);
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize(q(0, QFormat::Q2_5)), 0.0);
        assert_eq!(dequantize(q(16, QFormat::Q2_5)), 0.5);
        assert_eq!(dequantize(q(-128, QFormat::Q2_5)), -4.0);
    }

    #[test]
    fn format_range() {
        for f in 0..8u8 {
            let fmt = QFormat::new(f).unwrap();
            let lo = -(2f64.powi(7 - f as i32));
            let hi = 2f64.powi(7 - f as i32) - 2f64.powi(-(f as i32));
            assert_eq!(fmt.min_value(), lo);
            assert_eq!(fmt.max_value(), hi);
        }
        assert!(QFormat::new(8).is_err());
        assert_eq!(QFormat::Q2_5.to_string(), "2.5");
    }

    #[test]
    fn mac_examples() {
        let a = q(16, QFormat::Q2_5);
        assert_eq!(mac(Acc16::zero(10), a, a).value, 256);
        let m = q(127, QFormat::Q2_5);
        let r = mac(Acc16::new(32760, 10), m, m);
        assert_eq!(r.value, 32767);
        assert!(r.saturated);
        let n = q(-128, QFormat::Q2_5);
        let r = mac(Acc16::new(-32760, 10), n, m);
        assert_eq!(r.value, -32768);
        assert!(r.saturated);
    }

    #[test]
    fn requantize_examples() {
        assert_eq!(requantize(Acc16::new(256, 10), QFormat::Q2_5).unwrap().code, 8);
        // 17 / 32 = 0.53125 LSB of the target, rounds up to 1
        assert_eq!(requantize(Acc16::new(17, 10), QFormat::Q2_5).unwrap().code, 1);
        assert_eq!(requantize(Acc16::new(16, 10), QFormat::Q2_5).unwrap().code, 1);
        assert_eq!(requantize(Acc16::new(15, 10), QFormat::Q2_5).unwrap().code, 0);
        assert_eq!(requantize(Acc16::new(-16, 10), QFormat::Q2_5).unwrap().code, -1);
        assert_eq!(requantize(Acc16::new(32767, 10), QFormat::Q0_7).unwrap().code, 127);
        assert!(matches!(
            requantize(Acc16::new(1, 3), QFormat::Q2_5),
            Err(FormatError::Upscale { .. })
        ));
    }

    #[test]
    fn add_code_and_rescale() {
        let acc = Acc16::new(100, 10).add_code(q(3, QFormat::Q2_5));
        assert_eq!(acc.value, 100 + 96);
        let big = Acc16::new(32000, 10).add_code(q(127, QFormat::Q2_5));
        assert_eq!(big.value, i16::MAX);
        assert!(big.saturated);
        assert_eq!(Acc16::new(6, 14).rescale(12).value, 2);
        assert_eq!(Acc16::new(-6, 14).rescale(12).value, -2);
        assert_eq!(Acc16::new(3, 12).rescale(14).value, 12);
    }

    #[test]
    fn round_trip_all_codes() {
        for f in 0..8u8 {
            let fmt = QFormat::new(f).unwrap();
            for c in i8::MIN..=i8::MAX {
                assert_eq!(quantize(dequantize(q(c, fmt)), fmt).code, c);
            }
        }
    }

    proptest! {
        #[test]
        fn quantize_is_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0, f in 0u8..8) {
            let fmt = QFormat::new(f).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize(lo, fmt).code <= quantize(hi, fmt).code);
        }

        #[test]
        fn mac_exact_below_saturation(acc in any::<i16>(), a in any::<i8>(), b in any::<i8>()) {
            let wide = acc as i64 + a as i64 * b as i64;
            let r = mac(Acc16::new(acc, 10), q(a, QFormat::Q2_5), q(b, QFormat::Q2_5));
            if wide.abs() < 1 << 15 {
                prop_assert_eq!(r.value as i64, wide);
                prop_assert!(!r.saturated);
            } else {
                // clamped to an extreme, never wrapped
                prop_assert!(r.value == i16::MAX || r.value == i16::MIN);
                prop_assert_eq!(r.value as i64 > 0, wide > 0);
            }
        }

        #[test]
        fn requantize_error_within_half_lsb(v in -4000i16..4000, tf in 0u8..8) {
            let target = QFormat::new(tf).unwrap();
            let acc = Acc16::new(v, 10);
            let r = requantize(acc, target).unwrap();
            let exact = acc.to_f64();
            if (r.code as i32) > CODE_MIN && (r.code as i32) < CODE_MAX {
                prop_assert!((r.to_f64() - exact).abs() <= 0.5 * target.lsb() + 1e-12);
            }
        }
    }
}
