// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! Published extrapolation table and the calibration fitted against it.

use super::{analytic_trace, demonstrator_spec, extrapolate, Calibration, EnergyConstants, EnergyReport, OperatingPoint};
use crate::lstm_ref::NetworkSpec;
use crate::mapper::{GridMode, TileSpec};
use crate::sim::{Activity, Category, CycleModel, LoopMode};
use serde::Serialize;

/// One published row. Networks have as many inputs as hidden units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table4Row {
    pub layers: usize,
    pub hidden: usize,
    pub grid: usize,
    pub chips: usize,
    pub time_us: f64,
    pub core_mw: f64,
    pub core_uj: f64,
    pub io_uj: f64,
    pub total_uj: f64,
    pub io_pct: f64,
}

#[allow(clippy::too_many_arguments)]
const fn row(
    layers: usize,
    hidden: usize,
    grid: usize,
    chips: usize,
    time_us: f64,
    core_mw: f64,
    core_uj: f64,
    io_uj: f64,
    total_uj: f64,
    io_pct: f64,
) -> Table4Row {
    Table4Row { layers, hidden, grid, chips, time_us, core_mw, core_uj, io_uj, total_uj, io_pct }
}

pub const TABLE4: [Table4Row; 10] = [
    row(1, 96, 1, 1, 101.2, 2.0, 0.2, 0.0, 0.2, 5.9),
    row(1, 56, 1, 1, 81.2, 2.0, 0.2, 0.0, 0.2, 6.1),
    row(1, 192, 2, 4, 295.2, 7.9, 2.3, 0.3, 2.6, 12.1),
    row(1, 288, 3, 9, 469.8, 17.7, 8.3, 1.0, 9.3, 10.4),
    row(1, 384, 4, 16, 644.4, 31.5, 20.3, 2.1, 22.3, 9.2),
    row(1, 480, 5, 25, 819.0, 49.2, 40.3, 3.7, 43.9, 8.3),
    row(2, 96, 1, 2, 182.8, 3.9, 0.7, 0.1, 0.8, 7.3),
    row(2, 192, 2, 8, 532.0, 15.7, 8.4, 0.8, 9.2, 8.6),
    row(3, 384, 4, 48, 1933.2, 94.4, 182.6, 11.2, 193.8, 5.8),
    row(3, 480, 5, 75, 2457.0, 147.6, 362.6, 21.0, 383.5, 5.5),
];

impl Table4Row {
    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec::uniform(self.layers, self.hidden, self.hidden, None)
    }

    pub fn label(&self) -> String {
        format!("{}L-{}NH-{}x{}", self.layers, self.hidden, self.grid, self.grid)
    }
}

/// True when `model` lies within `rel` of `published`, or within half a unit of
/// the last printed digit when that is wider.
pub fn within_printed(model: f64, published: f64, rel: f64, decimals: u32) -> bool {
    let half_digit = 0.5 * 10f64.powi(-(decimals as i32));
    (model - published).abs() <= (rel * published.abs()).max(half_digit) + 1e-12
}

/// True when `model` is within a factor `k` of some value that prints as
/// `published` with `decimals` digits.
pub fn within_factor_printed(model: f64, published: f64, k: f64, decimals: u32) -> bool {
    let half_digit = 0.5 * 10f64.powi(-(decimals as i32));
    let (lo, hi) = ((published - half_digit).max(0.0), published + half_digit);
    model >= lo / k && model <= hi * k
}

#[derive(Debug, Clone, Serialize)]
pub struct Table4Comparison {
    pub row: Table4Row,
    pub chips: usize,
    pub model: EnergyReport,
}

impl Table4Comparison {
    pub fn time_us(&self) -> f64 {
        self.model.time_per_inference_s * 1e6
    }
    pub fn core_mw(&self) -> f64 {
        self.model.core_power_w * 1e3
    }
    pub fn core_uj(&self) -> f64 {
        self.model.core_energy_j * 1e6
    }
    pub fn io_uj(&self) -> f64 {
        self.model.io_energy_j * 1e6
    }
    pub fn total_uj(&self) -> f64 {
        self.model.total_energy_j * 1e6
    }
    pub fn io_pct(&self) -> f64 {
        self.model.io_fraction
    }
    pub fn time_error(&self) -> f64 {
        self.time_us() / self.row.time_us - 1.0
    }
}

/// Models every published row with resident (stacked) parameters.
pub fn compare_table4(op: &OperatingPoint, consts: &EnergyConstants, cal: &Calibration) -> Vec<Table4Comparison> {
    let tile = TileSpec::default();
    TABLE4
        .iter()
        .map(|r| {
            let model = extrapolate(&r.spec(), &tile, GridMode::Stacked, op, consts, cal).expect("published shapes fit");
            Table4Comparison { row: *r, chips: model.dies, model }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationFit {
    pub calibration: Calibration,
    /// Fixed cycles per step, `4 · c_gate + c_fixed`.
    pub k: u64,
    /// Worst relative latency error over the single-layer rows.
    pub max_time_error: f64,
    /// Unclamped least-squares stall fraction.
    pub raw_stall_fraction: f64,
}

fn inference_cycles(spec: &NetworkSpec, cycles: CycleModel) -> u64 {
    analytic_trace(spec, &TileSpec::default(), GridMode::Stacked, cycles)
        .expect("published shapes fit")
        .cycles_in(&[Category::Inference])
}

/// Fits the cycle constants and the stall fraction to the single-layer rows.
///
/// The step constant `K` minimises the worst relative latency error; its
/// split into `c_gate` and `c_fixed` is chosen by the demonstrator latency,
/// measured against its 330 µs window. The stall fraction is a relative
/// least-squares fit of core power, clamped to `[0, 1]`.
pub fn fit_calibration(loop_mode: LoopMode) -> CalibrationFit {
    let op = OperatingPoint::REFERENCE;
    let rows: Vec<&Table4Row> = TABLE4.iter().filter(|r| r.layers == 1).collect();
    let zero = CycleModel { c_gate: 0, c_fixed: 0, loop_mode };
    let base: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (inference_cycles(&r.spec(), zero) as f64, r.time_us * 1e-6 * op.frequency_hz))
        .collect();
    let worst = |k: u64| base.iter().map(|(b, t)| ((b + k as f64) / t - 1.0).abs()).fold(0.0, f64::max);
    let k = (0..=4096u64).min_by(|a, b| worst(*a).total_cmp(&worst(*b))).unwrap();

    let demo = demonstrator_spec();
    let target = 330e-6 * op.frequency_hz;
    let demo_err = |g: u64| {
        let cm = CycleModel { c_gate: g, c_fixed: k - 4 * g, loop_mode };
        let c = analytic_trace(&demo, &TileSpec::default(), GridMode::Stacked, cm)
            .expect("demonstrator fits")
            .cycles_in(&[Category::Inference, Category::Output]);
        (c as f64 - target).abs()
    };
    let g = (0..=k / 4).min_by(|a, b| demo_err(*a).total_cmp(&demo_err(*b))).unwrap();
    let cycles = CycleModel { c_gate: g, c_fixed: k - 4 * g, loop_mode };

    // P·t = P_active · (active + s · stalled) die-seconds
    let (mut num, mut den) = (0.0, 0.0);
    for r in &rows {
        let t = analytic_trace(&r.spec(), &TileSpec::default(), GridMode::Stacked, cycles).expect("published shapes fit");
        let (mut active, mut stalled, mut time) = (0.0, 0.0, 0.0);
        for p in t.phases.iter().filter(|p| p.category == Category::Inference) {
            let dt = p.cycles() as f64 / op.frequency_hz;
            time += dt;
            for a in &p.activity {
                match a {
                    Activity::Active => active += dt,
                    _ => stalled += dt,
                }
            }
        }
        let pa = super::P_CORE_ACTIVE_MW;
        let (a, b) = (pa * active / time, pa * stalled / time);
        // relative residual (a + s·b − P) / P
        num += b * (r.core_mw - a) / (r.core_mw * r.core_mw);
        den += b * b / (r.core_mw * r.core_mw);
    }
    let raw = if den > 0.0 { num / den } else { 1.0 };
    CalibrationFit {
        calibration: Calibration { cycles, stall_fraction: raw.clamp(0.0, 1.0) },
        k,
        max_time_error: worst(k),
        raw_stall_fraction: raw,
    }
}
