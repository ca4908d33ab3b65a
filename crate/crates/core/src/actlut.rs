// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! 256-entry activation look-up tables.

use crate::qformat::{dequantize, expect_format, quantize, FormatError, QFormat, Q8};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActKind {
    Sigmoid,
    Tanh,
}

impl ActKind {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            ActKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            ActKind::Tanh => x.tanh(),
        }
    }

    /// Largest slope of the function.
    pub fn max_derivative(self) -> f64 {
        match self {
            ActKind::Sigmoid => 0.25,
            ActKind::Tanh => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActKind::Sigmoid => "sigmoid",
            ActKind::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Error)]
pub enum LutError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("error statistics need at least one sample")]
    NoSamples,
    #[error("i/o error writing table: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lut256 {
    pub kind: ActKind,
    pub in_format: QFormat,
    pub out_format: QFormat,
    table: [i8; 256],
}

fn index(code: i8) -> usize {
    code as u8 as usize
}

impl Lut256 {
    /// Fills every entry with `quantize(act(dequantize(code)))`.
    pub fn build(kind: ActKind, in_format: QFormat, out_format: QFormat) -> Self {
        let mut table = [0i8; 256];
        for code in i8::MIN..=i8::MAX {
            let x = dequantize(Q8::new(code, in_format));
            table[index(code)] = quantize(kind.eval(x), out_format).code;
        }
        Self { kind, in_format, out_format, table }
    }

    pub fn apply(&self, x: Q8) -> Result<Q8, LutError> {
        expect_format(x, self.in_format)?;
        Ok(Q8::new(self.lookup(x.code), self.out_format))
    }

    /// Raw code lookup; the caller guarantees the input format.
    #[inline]
    pub fn lookup(&self, code: i8) -> i8 {
        self.table[index(code)]
    }

    /// Entries in the hardware's addressing order (input code reinterpreted
    /// as an unsigned byte).
    pub fn raw_table(&self) -> &[i8; 256] {
        &self.table
    }

    /// One line per entry: `index,input_code,input_value,output_code,output_value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), LutError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "input_code", "input_value", "output_code", "output_value"])
            .map_err(csv_io)?;
        for idx in 0..256usize {
            let code = idx as u8 as i8;
            let y = Q8::new(self.table[idx], self.out_format);
            w.write_record(&[
                idx.to_string(),
                code.to_string(),
                dequantize(Q8::new(code, self.in_format)).to_string(),
                y.code.to_string(),
                dequantize(y).to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Error of the full fixed-point pipeline `quantize → lookup → dequantize`
    /// against the exact activation.
    pub fn error_stats(&self, samples: &[f64]) -> Result<ErrorStats, LutError> {
        if samples.is_empty() {
            return Err(LutError::NoSamples);
        }
        let n = samples.len() as f64;
        let mut sum_se = 0.0;
        let mut sum_se2 = 0.0;
        let mut sum_err = 0.0;
        let mut max_se: f64 = 0.0;
        for &s in samples {
            let y = self.lookup(quantize(s, self.in_format).code);
            let err = dequantize(Q8::new(y, self.out_format)) - self.kind.eval(s);
            let se = err * err;
            sum_se += se;
            sum_se2 += se * se;
            sum_err += err;
            max_se = max_se.max(se);
        }
        let mse = sum_se / n;
        let var = (sum_se2 / n - mse * mse).max(0.0);
        Ok(ErrorStats { mse, max_se, mean: sum_err / n, std: var.sqrt() })
    }
}

fn csv_io(e: csv::Error) -> LutError {
    LutError::Io(std::io::Error::other(e))
}

/// `mse` and `std` describe the squared error; `mean` is the mean signed error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub mse: f64,
    pub max_se: f64,
    pub mean: f64,
    pub std: f64,
}

/// Uniform grid of `count` points over `[lo, hi)`.
pub fn uniform_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let step = (hi - lo) / count as f64;
    (0..count).map(|i| lo + step * i as f64).collect()
}

/// The sigmoid and tanh tables a datapath uses.
#[derive(Debug, Clone)]
pub struct ActLuts {
    pub sigmoid: Lut256,
    pub tanh: Lut256,
}

impl ActLuts {
    pub fn new(in_format: QFormat, out_format: QFormat) -> Self {
        Self {
            sigmoid: Lut256::build(ActKind::Sigmoid, in_format, out_format),
            tanh: Lut256::build(ActKind::Tanh, in_format, out_format),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn luts() -> (Lut256, Lut256) {
        (
            Lut256::build(ActKind::Tanh, QFormat::Q2_5, QFormat::Q0_7),
            Lut256::build(ActKind::Sigmoid, QFormat::Q2_5, QFormat::Q0_7),
        )
    }

    #[test]
    fn anchor_entries() {
        let (tanh, sig) = luts();
        assert_eq!(tanh.lookup(0), 0);
        assert_eq!(tanh.lookup(127), 127);
        assert_eq!(sig.lookup(0), quantize(0.5, QFormat::Q0_7).code);
        assert_eq!(sig.lookup(0), 64);
        // σ(-4) ≈ 0.018 → code 2
        let expected = quantize(1.0 / (1.0 + 4f64.exp()), QFormat::Q0_7).code;
        assert_eq!(sig.lookup(-128), expected);
        assert!(sig.lookup(-128) <= 3);
    }

    #[test]
    fn exhaustive_construction_rule() {
        let (tanh, sig) = luts();
        for c in i8::MIN..=i8::MAX {
            let x = c as f64 / 32.0;
            let t = (x.tanh() * 128.0).round().clamp(-128.0, 127.0) as i8;
            let s = ((1.0 / (1.0 + (-x).exp())) * 128.0).round().clamp(-128.0, 127.0) as i8;
            assert_eq!(tanh.lookup(c), t, "tanh code {c}");
            assert_eq!(sig.lookup(c), s, "sigmoid code {c}");
        }
    }

    #[test]
    fn monotone_and_odd() {
        let (tanh, sig) = luts();
        for c in i8::MIN..i8::MAX {
            assert!(tanh.lookup(c) <= tanh.lookup(c + 1));
            assert!(sig.lookup(c) <= sig.lookup(c + 1));
        }
        for c in -127..=127i8 {
            let sum = tanh.lookup(c) as i32 + tanh.lookup(-c) as i32;
            assert!(sum.abs() <= 1, "odd symmetry broken at {c}");
        }
    }

    #[test]
    fn apply_checks_format() {
        let (tanh, _) = luts();
        assert_eq!(tanh.apply(Q8::new(0, QFormat::Q2_5)).unwrap().code, 0);
        assert!(tanh.apply(Q8::new(0, QFormat::Q0_7)).is_err());
    }

    #[test]
    fn empty_samples_rejected() {
        let (tanh, _) = luts();
        assert!(matches!(tanh.error_stats(&[]), Err(LutError::NoSamples)));
    }

    #[test]
    fn representable_points_bounded_by_output_rounding() {
        // x = 0 is exact on input and output; σ at exact grid points only
        // incurs output rounding.
        let (tanh, sig) = luts();
        let lsb = QFormat::Q0_7.lsb();
        let s = tanh.error_stats(&[0.0]).unwrap();
        assert_eq!(s.max_se, 0.0);
        let grid: Vec<f64> = (-128..128).map(|c| c as f64 / 32.0).collect();
        let s = sig.error_stats(&grid).unwrap();
        assert!(s.max_se <= (0.5 * lsb).powi(2) + 1e-15);
    }

    #[test]
    fn triangle_bound_on_dense_grid() {
        let (tanh, sig) = luts();
        for lut in [&tanh, &sig] {
            let bound = 0.5 * lut.in_format.lsb() * lut.kind.max_derivative()
                + 0.5 * lut.out_format.lsb();
            let lo = lut.in_format.min_value();
            let hi = lut.in_format.max_value();
            for x in uniform_grid(lo, hi, 20_000) {
                let y = lut.lookup(quantize(x, lut.in_format).code) as f64 * lut.out_format.lsb();
                assert!((y - lut.kind.eval(x)).abs() <= bound + 1e-12, "{} at {x}", lut.kind.name());
            }
        }
    }

    #[test]
    fn csv_dump_has_256_rows() {
        let (tanh, _) = luts();
        let mut buf = Vec::new();
        tanh.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 257);
        assert!(text.lines().nth(1).unwrap().starts_with("0,0,0,0,0"));
    }
}
