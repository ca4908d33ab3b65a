// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! TOML run configuration and its resolution against command-line flags.

use crate::{Exit, GlobalArgs, NetArgs};
use anyhow::{anyhow, Context};
use serde::Deserialize;
use slstm::lstm_ref::{FormatSet, LayerShape, NetworkSpec};
use slstm::mapper::{GridMode, InputCount, TileSpec};
use slstm::perf::{Calibration, EnergyConstants, OperatingPoint};
use slstm::qformat::QFormat;
use slstm::sim::{CycleModel, LoopMode};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub network: NetworkSection,
    /// Parameter container manifest.
    pub params: Option<PathBuf>,
    /// Feature container manifest.
    pub features: Option<PathBuf>,
    /// Random feature rows when no feature container is given.
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub tile: TileSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub operating_point: OpSection,
    #[serde(default)]
    pub energy: EnergySection,
    #[serde(default)]
    pub calibration: CalibrationSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(untagged)]
pub enum Hidden {
    #[default]
    None,
    Uniform(usize),
    PerLayer(Vec<usize>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub layers: Option<usize>,
    pub inputs: Option<usize>,
    #[serde(default)]
    pub hidden: Hidden,
    pub outputs: Option<usize>,
    pub peephole: Option<bool>,
    #[serde(default)]
    pub formats: FormatsSection,
}

/// Fractional bits per tensor role.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatsSection {
    pub state: Option<u8>,
    pub weight: Option<u8>,
    pub bias: Option<u8>,
    pub gate: Option<u8>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileSection {
    pub nh_capacity: Option<usize>,
    pub sram_bytes: Option<usize>,
    pub sram_banks: Option<usize>,
    pub link_data_bits: Option<u32>,
    pub word_bits: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub mode: Option<GridMode>,
    pub max_pins: Option<u32>,
    pub input_count: Option<InputCount>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpSection {
    pub frequency_hz: Option<f64>,
    pub v_core: Option<f64>,
    pub v_pad: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    pub e_drive_pj_per_bit: Option<f64>,
    pub e_receive_pj_per_bit: Option<f64>,
    pub p_core_active_mw: Option<f64>,
    pub p_io_static_mw: Option<f64>,
    pub alpha_toggle: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub c_gate: Option<u64>,
    pub c_fixed: Option<u64>,
    pub loop_mode: Option<LoopMode>,
    pub stall_fraction: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Exit> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Exit::usage)?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(Exit::usage)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Exit::usage(anyhow!(
                "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                path.display(),
                cfg.schema_version
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.params, &mut cfg.features, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Everything a command needs, after defaults, config file and flags.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub spec: NetworkSpec,
    /// The network shape was given explicitly rather than defaulted.
    pub explicit_network: bool,
    pub tile: TileSpec,
    pub mode: GridMode,
    pub max_pins: Option<u32>,
    pub input_count: InputCount,
    pub op: OperatingPoint,
    pub consts: EnergyConstants,
    pub cal: Calibration,
    pub seed: u64,
    pub steps: usize,
    pub params: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn format(bits: Option<u8>, default: QFormat, role: &str) -> Result<QFormat, Exit> {
    match bits {
        None => Ok(default),
        Some(b) => QFormat::new(b).map_err(|e| Exit::usage(anyhow!("formats.{role}: {e}"))),
    }
}

pub fn resolve(g: &GlobalArgs, net: &NetArgs) -> Result<Resolved, Exit> {
    let cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig { schema_version: SCHEMA_VERSION, ..RunConfig::default() },
    };
    let n = &cfg.network;
    let layers = net.layers.or(n.layers);
    let hidden: Vec<usize> = match (&net.hidden, &n.hidden) {
        (Some(h), _) => vec![*h; layers.unwrap_or(1)],
        (None, Hidden::Uniform(h)) => vec![*h; layers.unwrap_or(1)],
        (None, Hidden::PerLayer(v)) => {
            if layers.is_some_and(|l| l != v.len()) {
                return Err(Exit::usage(anyhow!("network.layers disagrees with the length of network.hidden")));
            }
            v.clone()
        }
        (None, Hidden::None) => vec![96; layers.unwrap_or(1)],
    };
    if hidden.is_empty() {
        return Err(Exit::usage(anyhow!("the network needs at least one layer")));
    }
    let inputs = net.inputs.or(n.inputs).unwrap_or(hidden[0]);
    let outputs = net.outputs.or(n.outputs).filter(|&o| o > 0);
    let explicit_network = net.layers.is_some()
        || net.hidden.is_some()
        || net.inputs.is_some()
        || net.outputs.is_some()
        || n.layers.is_some()
        || n.inputs.is_some()
        || !matches!(n.hidden, Hidden::None)
        || n.outputs.is_some();
    let d = FormatSet::default();
    let f = &n.formats;
    let formats = FormatSet {
        state: format(f.state, d.state, "state")?,
        weight: format(f.weight, d.weight, "weight")?,
        bias: format(f.bias, d.bias, "bias")?,
        gate: format(f.gate, d.gate, "gate")?,
    };
    let shapes = hidden
        .iter()
        .enumerate()
        .map(|(l, &h)| LayerShape { inputs: if l == 0 { inputs } else { hidden[l - 1] }, hidden: h })
        .collect();
    let spec = NetworkSpec { layers: shapes, outputs, peephole: n.peephole.unwrap_or(true), formats };
    spec.validate().map_err(|e| Exit::usage(anyhow!("network: {e}")))?;

    let dt = TileSpec::default();
    let t = &cfg.tile;
    let tile = TileSpec {
        nh_capacity: t.nh_capacity.unwrap_or(dt.nh_capacity),
        sram_bytes: t.sram_bytes.unwrap_or(dt.sram_bytes),
        sram_banks: t.sram_banks.unwrap_or(dt.sram_banks),
        link_data_bits: t.link_data_bits.unwrap_or(dt.link_data_bits),
        word_bits: t.word_bits.unwrap_or(dt.word_bits),
    };
    tile.validate().map_err(|e| Exit::usage(anyhow!("tile: {e}")))?;

    let mode = match (g.reload, g.chip_select) {
        (true, true) => return Err(Exit::usage(anyhow!("--reload and --chip-select are exclusive"))),
        (true, false) => GridMode::Reload,
        (false, true) => GridMode::ChipSelect,
        (false, false) => cfg.grid.mode.unwrap_or_default(),
    };

    let r = OperatingPoint::REFERENCE;
    let o = &cfg.operating_point;
    let op = OperatingPoint {
        frequency_hz: g.freq.or(o.frequency_hz).unwrap_or(r.frequency_hz),
        v_core: o.v_core.unwrap_or(r.v_core),
        v_pad: o.v_pad.unwrap_or(r.v_pad),
    };
    if !(op.frequency_hz.is_finite() && op.frequency_hz > 0.0 && op.v_core > 0.0 && op.v_pad > 0.0) {
        return Err(Exit::usage(anyhow!("operating point must have positive frequency and voltages")));
    }

    let dc = Calibration::default();
    let c = &cfg.calibration;
    let cal = Calibration {
        cycles: CycleModel {
            c_gate: c.c_gate.unwrap_or(dc.cycles.c_gate),
            c_fixed: c.c_fixed.unwrap_or(dc.cycles.c_fixed),
            loop_mode: c.loop_mode.unwrap_or(dc.cycles.loop_mode),
        },
        stall_fraction: c.stall_fraction.unwrap_or(dc.stall_fraction),
    };
    let mut consts = EnergyConstants::with_stall_fraction(cal.stall_fraction);
    let e = &cfg.energy;
    consts.e_drive_pj_per_bit = e.e_drive_pj_per_bit.unwrap_or(consts.e_drive_pj_per_bit);
    consts.e_receive_pj_per_bit = e.e_receive_pj_per_bit.unwrap_or(consts.e_receive_pj_per_bit);
    if let Some(p) = e.p_core_active_mw {
        consts.p_core_active_mw = p;
        consts.p_core_stall_mw = p * cal.stall_fraction;
    }
    consts.p_io_static_mw = e.p_io_static_mw.unwrap_or(consts.p_io_static_mw);
    consts.alpha_toggle = e.alpha_toggle.unwrap_or(consts.alpha_toggle);
    consts.validate().map_err(|e| Exit::usage(anyhow!("energy: {e}")))?;

    Ok(Resolved {
        spec,
        explicit_network,
        tile,
        mode,
        max_pins: cfg.grid.max_pins,
        input_count: cfg.grid.input_count.unwrap_or_default(),
        op,
        consts,
        cal,
        seed: g.seed.or(cfg.seed).unwrap_or(1),
        steps: net.steps.or(cfg.steps).unwrap_or(4),
        params: cfg.params,
        features: cfg.features,
        out: g.out.clone().or(cfg.out),
    })
}
