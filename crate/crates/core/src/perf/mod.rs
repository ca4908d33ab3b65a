// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! Latency, power and energy from phase traces, and the calibrated analytic
//! model used for extrapolation to larger grids.

pub mod analytic;
mod table4;

pub use table4::{
    compare_table4, fit_calibration, within_factor_printed, within_printed, CalibrationFit, Table4Comparison, Table4Row, TABLE4,
};

use crate::lstm_ref::NetworkSpec;
use crate::mapper::{plan_grid, Endpoint, GridMode, MapError, TileSpec};
use crate::sim::{Activity, Category, CycleModel, PhaseTrace};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub frequency_hz: f64,
    pub v_core: f64,
    pub v_pad: f64,
}

impl OperatingPoint {
    /// 10 MHz, 1.2 V core, 2.5 V pads.
    pub const REFERENCE: Self = Self { frequency_hz: 10e6, v_core: 1.2, v_pad: 2.5 };

    pub fn at_frequency(frequency_hz: f64) -> Self {
        Self { frequency_hz, ..Self::REFERENCE }
    }
}

impl Default for OperatingPoint {
    fn default() -> Self {
        Self::REFERENCE
    }
}

/// Power and energy constants at [`OperatingPoint::REFERENCE`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyConstants {
    pub e_drive_pj_per_bit: f64,
    pub e_receive_pj_per_bit: f64,
    pub p_core_active_mw: f64,
    pub p_core_stall_mw: f64,
    /// Pad-ring power of a die independent of traffic.
    pub p_io_static_mw: f64,
    /// Toggles per transferred bit when no toggle counts are available.
    pub alpha_toggle: f64,
}

/// Four measured dies share 7.87 mW of core power.
pub const P_CORE_ACTIVE_MW: f64 = 7.87 / 4.0;
/// Derived from the demonstrator I/O power, see [`derive_io_static_mw`].
pub const P_IO_STATIC_MW: f64 = 0.0900;

impl Default for EnergyConstants {
    fn default() -> Self {
        Self::with_stall_fraction(Calibration::default().stall_fraction)
    }
}

impl EnergyConstants {
    pub fn with_stall_fraction(fraction: f64) -> Self {
        Self {
            e_drive_pj_per_bit: 27.8,
            e_receive_pj_per_bit: 4.7,
            p_core_active_mw: P_CORE_ACTIVE_MW,
            p_core_stall_mw: P_CORE_ACTIVE_MW * fraction,
            p_io_static_mw: P_IO_STATIC_MW,
            alpha_toggle: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.e_drive_pj_per_bit,
            self.e_receive_pj_per_bit,
            self.p_core_active_mw,
            self.p_core_stall_mw,
            self.p_io_static_mw,
            self.alpha_toggle,
        ];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err("energy constants must be finite and non-negative".into())
        }
    }
}

/// The fitted constants of the cycle and power model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub cycles: CycleModel,
    /// Stalled-die power relative to active power.
    pub stall_fraction: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self { cycles: CycleModel::default(), stall_fraction: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToggleSource {
    /// Counted toggles per transferred bit.
    #[default]
    Measured,
    /// `alpha_toggle` for every bit.
    Alpha,
}

/// Which phases count towards a per-inference figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    /// Recurrent layers only, as in the extrapolation table.
    Layers,
    /// Layers plus output layer and write-back.
    WithOutput,
    /// Everything, configuration included.
    All,
}

impl Window {
    pub fn categories(self) -> &'static [Category] {
        match self {
            Window::Layers => &[Category::Inference],
            Window::WithOutput => &[Category::Inference, Category::Output],
            Window::All => &[Category::Config, Category::Inference, Category::Output],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEnergy {
    pub phase: String,
    pub cycles: u64,
    pub core_j: f64,
    pub io_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub dies: usize,
    pub steps: usize,
    pub cycles_per_inference: f64,
    pub time_per_inference_s: f64,
    pub core_energy_j: f64,
    pub io_dynamic_j: f64,
    pub io_static_j: f64,
    pub io_energy_j: f64,
    pub total_energy_j: f64,
    /// Percent of the total.
    pub io_fraction: f64,
    pub core_power_w: f64,
    pub io_power_w: f64,
    pub total_power_w: f64,
    /// Per inference, by phase kind.
    pub per_phase: Vec<PhaseEnergy>,
    /// Per inference core energy of each physical die.
    pub per_die_core_j: Vec<f64>,
}

/// Scales reference core power to an operating point: linear in frequency,
/// quadratic in voltage.
pub fn core_power_at(p_ref_mw: f64, op: &OperatingPoint) -> f64 {
    let r = OperatingPoint::REFERENCE;
    p_ref_mw * (op.frequency_hz / r.frequency_hz) * (op.v_core / r.v_core).powi(2)
}

/// Energy of `trace` restricted to `window`, averaged over its steps.
pub fn report(
    trace: &PhaseTrace,
    op: &OperatingPoint,
    consts: &EnergyConstants,
    toggles: ToggleSource,
    window: Window,
) -> EnergyReport {
    let f = op.frequency_hz;
    let pad = (op.v_pad / OperatingPoint::REFERENCE.v_pad).powi(2);
    let p_active = core_power_at(consts.p_core_active_mw, op) * 1e-3;
    let p_stall = core_power_at(consts.p_core_stall_mw, op) * 1e-3;
    let p_io_static = consts.p_io_static_mw * 1e-3 * pad;
    let cats = window.categories();
    let steps = trace.steps.max(1) as f64;
    let mut per_die = vec![0.0; trace.dies];
    let mut per_phase: BTreeMap<&'static str, PhaseEnergy> = BTreeMap::new();
    let (mut cycles, mut core, mut io_dyn) = (0u64, 0.0, 0.0);
    for p in trace.phases.iter().filter(|p| cats.contains(&p.category)) {
        let dt = p.cycles() as f64 / f;
        let mut pc = 0.0;
        for (d, a) in p.activity.iter().enumerate() {
            let e = match a {
                Activity::Active => p_active,
                Activity::Stalled | Activity::Idle => p_stall,
            } * dt;
            per_die[d] += e;
            pc += e;
        }
        let mut pi = 0.0;
        for u in &p.links {
            let c = &u.counters;
            if c.bits_sent == 0 {
                continue;
            }
            let tf = match toggles {
                ToggleSource::Measured => c.toggles as f64 / c.bits_sent as f64,
                ToggleSource::Alpha => consts.alpha_toggle,
            };
            let driven = if matches!(u.src, Endpoint::Die(_)) { c.bits_sent as f64 } else { 0.0 };
            let e = (driven * consts.e_drive_pj_per_bit + c.bits_received as f64 * consts.e_receive_pj_per_bit) * 1e-12;
            pi += e * tf * pad;
        }
        cycles += p.cycles();
        core += pc;
        io_dyn += pi;
        let entry = per_phase.entry(p.kind.name()).or_insert_with(|| PhaseEnergy {
            phase: p.kind.name().to_string(),
            cycles: 0,
            core_j: 0.0,
            io_j: 0.0,
        });
        entry.cycles += p.cycles();
        entry.core_j += pc;
        entry.io_j += pi;
    }
    let time = cycles as f64 / f;
    let io_static = p_io_static * trace.dies as f64 * time;
    let (core, io_dyn, io_static, time) = (core / steps, io_dyn / steps, io_static / steps, time / steps);
    let io = io_dyn + io_static;
    let total = core + io;
    let per_phase = per_phase
        .into_values()
        .map(|mut p| {
            p.core_j /= steps;
            p.io_j /= steps;
            p
        })
        .collect();
    let power = |e: f64| if time > 0.0 { e / time } else { 0.0 };
    EnergyReport {
        dies: trace.dies,
        steps: trace.steps,
        cycles_per_inference: cycles as f64 / steps,
        time_per_inference_s: time,
        core_energy_j: core,
        io_dynamic_j: io_dyn,
        io_static_j: io_static,
        io_energy_j: io,
        total_energy_j: total,
        io_fraction: if total > 0.0 { 100.0 * io / total } else { 0.0 },
        core_power_w: power(core),
        io_power_w: power(io),
        total_power_w: power(total),
        per_phase,
        per_die_core_j: per_die.into_iter().map(|e| e / steps).collect(),
    }
}

/// Analytic trace of one steady-state time step (and configuration).
pub fn analytic_trace(
    spec: &NetworkSpec,
    tile: &TileSpec,
    mode: GridMode,
    cycles: CycleModel,
) -> Result<PhaseTrace, MapError> {
    let plan = plan_grid(spec, tile, mode)?;
    let mut t = PhaseTrace::new(plan.total_dies);
    t.phases = analytic::schedule(&plan, cycles, 1, true);
    t.steps = 1;
    Ok(t)
}

/// Closed-form per-inference report without running the simulator. The
/// window follows the extrapolation convention: configuration and output
/// layer excluded, alpha toggle factor.
pub fn extrapolate(
    spec: &NetworkSpec,
    tile: &TileSpec,
    mode: GridMode,
    op: &OperatingPoint,
    consts: &EnergyConstants,
    cal: &Calibration,
) -> Result<EnergyReport, MapError> {
    let trace = analytic_trace(spec, tile, mode, cal.cycles)?;
    Ok(report(&trace, op, consts, ToggleSource::Alpha, Window::Layers))
}

/// `2 · n_units · f` in GOP/s.
pub fn peak_performance(n_units: usize, op: &OperatingPoint) -> f64 {
    2.0 * n_units as f64 * op.frequency_hz / 1e9
}

/// Bytes per second over one link of `width` data bits.
pub fn link_bandwidth(op: &OperatingPoint, width: u32) -> f64 {
    width as f64 * op.frequency_hz / 8.0
}

/// `P · (l_new / l_old) · (V_new / V_old)²`.
pub fn scale_power(p: f64, l_old: f64, l_new: f64, v_old: f64, v_new: f64) -> f64 {
    p * (l_new / l_old) * (v_new / v_old).powi(2)
}

/// Demonstrator network: one 192-unit layer, 123 inputs, 62 outputs.
pub fn demonstrator_spec() -> NetworkSpec {
    NetworkSpec::uniform(1, 123, 192, Some(62))
}

/// Static pad power per die such that the demonstrator's modelled I/O
/// energy equals the measured 1.13 mW over 330 µs.
pub fn derive_io_static_mw(cal: &Calibration) -> f64 {
    let trace = analytic_trace(&demonstrator_spec(), &TileSpec::default(), GridMode::Stacked, cal.cycles)
        .expect("demonstrator fits the default die");
    let consts = EnergyConstants { p_io_static_mw: 0.0, ..EnergyConstants::with_stall_fraction(cal.stall_fraction) };
    let r = report(&trace, &OperatingPoint::REFERENCE, &consts, ToggleSource::Alpha, Window::WithOutput);
    let window = 330e-6;
    let measured = 1.13e-3 * window;
    (measured - r.io_dynamic_j) / (trace.dies as f64 * window) * 1e3
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_and_bandwidth() {
        let at = OperatingPoint::at_frequency;
        assert!((peak_performance(96, &at(159e6)) - 30.528).abs() < 1e-9);
        assert!((peak_performance(96, &at(3.8e6)) - 0.7296).abs() < 1e-9);
        assert_eq!(peak_performance(96, &at(0.0)), 0.0);
        assert_eq!(link_bandwidth(&at(159e6), 4), 79.5e6);
        assert_eq!(link_bandwidth(&at(10e6), 4), 5e6);
        assert_eq!(link_bandwidth(&at(0.0), 4), 0.0);
    }

    #[test]
    fn power_scaling() {
        assert!((scale_power(10.0, 65.0, 22.0, 1.2, 0.8) - 10.0 * 22.0 / 65.0 * (0.8f64 / 1.2).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn empty_trace_is_free() {
        let r = report(&PhaseTrace::new(4), &OperatingPoint::REFERENCE, &EnergyConstants::default(), ToggleSource::Alpha, Window::All);
        assert_eq!(r.total_energy_j, 0.0);
        assert_eq!(r.io_fraction, 0.0);
    }

    #[test]
    fn frozen_io_static_matches_derivation() {
        let d = derive_io_static_mw(&Calibration::default());
        assert!((d - P_IO_STATIC_MW).abs() < 5e-4, "derived {d}");
    }

    #[test]
    fn totals_add_up() {
        let t = analytic_trace(&NetworkSpec::uniform(1, 192, 192, None), &TileSpec::default(), GridMode::Stacked, CycleModel::default()).unwrap();
        let r = report(&t, &OperatingPoint::REFERENCE, &EnergyConstants::default(), ToggleSource::Alpha, Window::Layers);
        assert!((r.total_energy_j - r.core_energy_j - r.io_energy_j).abs() < 1e-18);
        let phases: f64 = r.per_phase.iter().map(|p| p.core_j + p.io_j).sum();
        assert!((phases + r.io_static_j - r.total_energy_j).abs() < 1e-15);
        let dies: f64 = r.per_die_core_j.iter().sum();
        assert!((dies - r.core_energy_j).abs() < 1e-15);
    }
}
