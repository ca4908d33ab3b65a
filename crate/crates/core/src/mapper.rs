// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! Placement of a network onto square grids of fixed-capacity dies.
//!
//! Layer `l` runs on an `n×n` grid with `n = ceil(N_H / nh_capacity)`.
//! Die `(i, j)` owns rows `i` and columns `j` of every gate matrix: the
//! hidden-row tile `i`, the input tile `j` of `W_x` and the hidden tile `j`
//! of `W_h`. The rightmost column holds the masters, which also own the
//! peephole and bias vectors of their row tile. With an output layer, die
//! `(i, j)` of the last grid holds `W_y[out tile i, hidden tile j]` and
//! master `i` holds the bias of out tile `i`.

use crate::lstm_ref::NetworkSpec;
use crate::tiling::{tile_len, tile_range};
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("die (layer {layer}, row {row}, col {col}) needs {bytes} bytes of parameter memory, capacity is {capacity}")]
    Capacity { layer: usize, row: usize, col: usize, bytes: usize, capacity: usize },
    #[error("invalid tile spec: {0}")]
    Tile(String),
    #[error("invalid network: {0}")]
    Network(String),
}

/// Capacity of one die.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub nh_capacity: usize,
    pub sram_bytes: usize,
    pub sram_banks: usize,
    pub link_data_bits: u32,
    pub word_bits: u32,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self { nh_capacity: 96, sram_bytes: 84 * 1024, sram_banks: 12, link_data_bits: 4, word_bits: 8 }
    }
}

impl TileSpec {
    pub fn validate(&self) -> Result<(), MapError> {
        if self.nh_capacity == 0 {
            return Err(MapError::Tile("nh_capacity must be positive".into()));
        }
        if self.link_data_bits == 0 || self.link_data_bits > 8 || !self.word_bits.is_multiple_of(self.link_data_bits) {
            return Err(MapError::Tile(format!(
                "link width {} does not divide the word width {}",
                self.link_data_bits, self.word_bits
            )));
        }
        Ok(())
    }

    /// Beats to move one storage word.
    pub fn beats_per_word(&self) -> u64 {
        (self.word_bits / self.link_data_bits) as u64
    }

    /// Beats to move one 16-bit partial sum.
    pub fn beats_per_partial(&self) -> u64 {
        (2 * self.word_bits / self.link_data_bits) as u64
    }

    pub fn grid_dim(&self, n_hidden: usize) -> usize {
        n_hidden.div_ceil(self.nh_capacity).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridMode {
    /// One grid per layer, all resident.
    #[default]
    Stacked,
    /// One grid reused for every layer with parameters reloaded per layer.
    Reload,
    /// Stacked grids whose parameter ports share a single stream.
    ChipSelect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Slave,
    Master,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    /// Host parameter and feature port.
    Param,
    /// Partial sums to the right neighbour.
    Reduction,
    /// Hidden-state relay and broadcast.
    Hidden,
    /// Results back to the host.
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "die")]
pub enum Endpoint {
    Host,
    Die(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkPlan {
    pub id: usize,
    pub kind: LinkKind,
    pub src: Endpoint,
    pub dst: Vec<Endpoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiePlan {
    pub id: usize,
    /// Physical die; differs from `id` only when grids are reused.
    pub physical: usize,
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    pub role: Role,
    /// Hidden units (gate rows) this die computes partials for.
    pub hidden_rows: Range<usize>,
    /// Input features this die multiplies.
    pub x_cols: Range<usize>,
    /// Hidden-state elements this die multiplies.
    pub h_cols: Range<usize>,
    /// Output-layer rows, on the last grid only.
    pub fc_rows: Option<Range<usize>>,
    pub footprint_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer: usize,
    pub n: usize,
    pub n_in: usize,
    pub n_hidden: usize,
    pub ni_tile: usize,
    pub nh_tile: usize,
    /// Zero elements appended to the input and hidden vectors.
    pub ni_pad: usize,
    pub nh_pad: usize,
    pub dies: Range<usize>,
}

impl LayerPlan {
    pub fn die_id(&self, row: usize, col: usize) -> usize {
        self.dies.start + row * self.n + col
    }

    pub fn master(&self, row: usize) -> usize {
        self.die_id(row, self.n - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FcPlan {
    pub n_out: usize,
    pub no_tile: usize,
    pub no_pad: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPlan {
    pub mode: GridMode,
    pub tile: TileSpec,
    pub spec: NetworkSpec,
    pub layers: Vec<LayerPlan>,
    pub fc: Option<FcPlan>,
    pub dies: Vec<DiePlan>,
    pub links: Vec<LinkPlan>,
    pub total_dies: usize,
}

impl GridPlan {
    pub fn reload(&self) -> bool {
        self.mode == GridMode::Reload
    }

    pub fn grid_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.n).collect()
    }

    pub fn links_of(&self, kind: LinkKind) -> impl Iterator<Item = &LinkPlan> {
        self.links.iter().filter(move |l| l.kind == kind)
    }

    /// The unique link of `kind` leaving `src` and reaching `dst`.
    pub fn find_link(&self, kind: LinkKind, src: Endpoint, dst: Endpoint) -> Option<&LinkPlan> {
        self.links.iter().find(|l| l.kind == kind && l.src == src && l.dst.contains(&dst))
    }

    pub fn max_footprint(&self) -> usize {
        self.dies.iter().map(|d| d.footprint_bytes).max().unwrap_or(0)
    }

    /// Summary such as `2x2, 4 dies`.
    pub fn summary(&self) -> String {
        let dims: Vec<String> = self.layers.iter().map(|l| format!("{0}x{0}", l.n)).collect();
        let mut dims_s = dims.join(" + ");
        if self.reload() && self.layers.len() > 1 {
            dims_s = format!("{dims_s} (reloaded)");
        }
        format!("{dims_s}, {} dies", self.total_dies)
    }
}

/// Parameter bytes of one die tile: gate matrices, then peephole and bias
/// vectors, then an optional output-layer tile `(rows, cols, with_bias)`.
pub fn memory_footprint(
    ni_tile: usize,
    nh_tile: usize,
    peephole: bool,
    bias: bool,
    fc: Option<(usize, usize, bool)>,
) -> usize {
    let mut bytes = 4 * nh_tile * (ni_tile + nh_tile);
    if peephole {
        bytes += 3 * nh_tile;
    }
    if bias {
        bytes += 4 * nh_tile;
    }
    if let Some((rows, cols, with_bias)) = fc {
        bytes += rows * cols + if with_bias { rows } else { 0 };
    }
    bytes
}

pub fn plan_grid(spec: &NetworkSpec, tile: &TileSpec, mode: GridMode) -> Result<GridPlan, MapError> {
    tile.validate()?;
    spec.validate().map_err(|e| MapError::Network(e.to_string()))?;
    let n_layers = spec.layers.len();
    let reload = mode == GridMode::Reload;
    let dims: Vec<usize> = spec.layers.iter().map(|s| tile.grid_dim(s.hidden)).collect();
    let shared = *dims.iter().max().unwrap();

    let mut layers = Vec::with_capacity(n_layers);
    let mut dies = Vec::new();
    let mut physical_next = 0;
    let fc_plan = spec.outputs.map(|no| {
        let n = dims[n_layers - 1];
        FcPlan { n_out: no, no_tile: tile_len(no, n), no_pad: tile_len(no, n) * n - no }
    });

    for (l, s) in spec.layers.iter().enumerate() {
        let n = dims[l];
        let (ni_t, nh_t) = (tile_len(s.inputs, n), tile_len(s.hidden, n));
        let start = dies.len();
        let last = l + 1 == n_layers;
        for i in 0..n {
            for j in 0..n {
                let master = j + 1 == n;
                let fc = match (&fc_plan, last) {
                    (Some(f), true) => Some((f.no_tile, nh_t, master)),
                    _ => None,
                };
                let bytes = memory_footprint(ni_t, nh_t, master && spec.peephole, master, fc);
                if bytes > tile.sram_bytes {
                    return Err(MapError::Capacity { layer: l, row: i, col: j, bytes, capacity: tile.sram_bytes });
                }
                let physical = if reload { i * shared + j } else { physical_next + i * n + j };
                dies.push(DiePlan {
                    id: dies.len(),
                    physical,
                    layer: l,
                    row: i,
                    col: j,
                    role: if master { Role::Master } else { Role::Slave },
                    hidden_rows: tile_range(s.hidden, n, i),
                    x_cols: tile_range(s.inputs, n, j),
                    h_cols: tile_range(s.hidden, n, j),
                    fc_rows: fc_plan.as_ref().filter(|_| last).map(|f| tile_range(f.n_out, n, i)),
                    footprint_bytes: bytes,
                });
            }
        }
        if !reload {
            physical_next += n * n;
        }
        layers.push(LayerPlan {
            layer: l,
            n,
            n_in: s.inputs,
            n_hidden: s.hidden,
            ni_tile: ni_t,
            nh_tile: nh_t,
            ni_pad: ni_t * n - s.inputs,
            nh_pad: nh_t * n - s.hidden,
            dies: start..dies.len(),
        });
    }

    let links = build_links(&layers, mode, fc_plan.is_some());
    let total_dies = if reload { shared * shared } else { dims.iter().map(|n| n * n).sum() };
    Ok(GridPlan { mode, tile: *tile, spec: spec.clone(), layers, fc: fc_plan, dies, links, total_dies })
}

fn build_links(layers: &[LayerPlan], mode: GridMode, fc: bool) -> Vec<LinkPlan> {
    let mut links: Vec<LinkPlan> = Vec::new();
    let mut add = |kind, src, dst: Vec<Endpoint>| {
        let id = links.len();
        links.push(LinkPlan { id, kind, src, dst });
    };
    let all_dies: Vec<Endpoint> = layers.iter().flat_map(|l| l.dies.clone()).map(Endpoint::Die).collect();
    match mode {
        GridMode::ChipSelect => add(LinkKind::Param, Endpoint::Host, all_dies),
        _ => {
            for d in &all_dies {
                add(LinkKind::Param, Endpoint::Host, vec![*d]);
            }
        }
    }
    let n_layers = layers.len();
    for (l, lp) in layers.iter().enumerate() {
        let n = lp.n;
        for i in 0..n {
            for j in 0..n - 1 {
                add(LinkKind::Reduction, Endpoint::Die(lp.die_id(i, j)), vec![Endpoint::Die(lp.die_id(i, j + 1))]);
            }
        }
        let last = l + 1 == n_layers;
        let distributes = mode != GridMode::Reload || n_layers == 1 || (last && fc);
        if n > 1 && distributes {
            // relay of the bottom master's tile up the master column
            for k in (1..n).rev() {
                add(LinkKind::Hidden, Endpoint::Die(lp.master(k)), vec![Endpoint::Die(lp.master(k - 1))]);
            }
            for j in 0..n - 1 {
                let dst = (0..n).map(|r| Endpoint::Die(lp.die_id(r, j))).collect();
                add(LinkKind::Hidden, Endpoint::Die(lp.master(j)), dst);
            }
        }
        if mode != GridMode::Reload && !last {
            let next = &layers[l + 1];
            if !(n > 1 && next.n == n) {
                // dedicated hand-off: each producer master to every consumer die
                let dst: Vec<Endpoint> = next.dies.clone().map(Endpoint::Die).collect();
                for i in 0..n {
                    add(LinkKind::Hidden, Endpoint::Die(lp.master(i)), dst.clone());
                }
            }
        }
        if last || mode == GridMode::Reload {
            for i in 0..n {
                add(LinkKind::Output, Endpoint::Die(lp.master(i)), vec![Endpoint::Host]);
            }
        }
    }
    attach_consumers(&mut links, layers, mode);
    links
}

/// Equal-size stacked grids: consumer column `j` listens on the producer's
/// distribution of hidden tile `j`.
fn attach_consumers(links: &mut [LinkPlan], layers: &[LayerPlan], mode: GridMode) {
    if mode == GridMode::Reload {
        return;
    }
    for pair in layers.windows(2) {
        let (prod, cons) = (&pair[0], &pair[1]);
        let n = prod.n;
        if n < 2 || cons.n != n {
            continue;
        }
        let column = |j: usize| (0..n).map(move |r| Endpoint::Die(cons.die_id(r, j)));
        for link in links.iter_mut().filter(|l| l.kind == LinkKind::Hidden) {
            let Endpoint::Die(src) = link.src else { continue };
            if src == prod.master(n - 1) && link.dst == [Endpoint::Die(prod.master(n - 2))] {
                link.dst.extend(column(n - 1));
            } else if let Some(j) = (0..n - 1).find(|&j| src == prod.master(j)) {
                if link.dst.len() == n && link.dst[0] == Endpoint::Die(prod.die_id(0, j)) {
                    link.dst.extend(column(j));
                }
            }
        }
    }
}

/// Pin counts of one die's package.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinBudget {
    pub pins_clk_rst: u32,
    pub pins_config: u32,
    pub pins_per_stream: u32,
    pub n_inp_layer: u32,
    pub n_out_layer: u32,
    pub total_min: u32,
    pub total_time_multiplexed: u32,
}

/// How to count the input-layer dies in the pin formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputCount {
    /// One stream per grid column.
    #[default]
    Columns,
    /// One stream per die of the input grid.
    AllDies,
}

pub fn pin_budget(plan: &GridPlan, count: InputCount, time_multiplexed: bool) -> PinBudget {
    let (clk, cfg, per) = (2, 3, 6);
    let n_first = plan.layers.first().map_or(1, |l| l.n) as u32;
    let n_last = plan.layers.last().map_or(1, |l| l.n) as u32;
    let n_inp = match count {
        InputCount::Columns => n_first,
        InputCount::AllDies => n_first * n_first,
    };
    let total_min = clk + cfg + per * n_inp + per * n_last;
    let tm = clk + cfg + per + per;
    PinBudget {
        pins_clk_rst: clk,
        pins_config: cfg,
        pins_per_stream: per,
        n_inp_layer: n_inp,
        n_out_layer: n_last,
        total_min: if time_multiplexed { tm } else { total_min },
        total_time_multiplexed: tm,
    }
}

/// External traffic of one layer pass in weight-reloading mode, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReloadPass {
    pub layer: usize,
    pub n: usize,
    /// Parameters loaded before the pass.
    pub param_bytes: usize,
    /// `h_{t-1}` to every die of its column plus `c_{t-1}` to the masters;
    /// not needed at the first time step.
    pub state_load_bytes: usize,
    /// Inputs to every die of their column.
    pub feature_bytes: usize,
    /// `h_t` and `c_t` written back by the masters.
    pub state_store_bytes: usize,
}

/// Pass list of one time step. A single layer keeps its parameters and
/// state resident, so only its first load is itemized.
pub fn reload_schedule(spec: &NetworkSpec, tile: &TileSpec) -> Result<Vec<ReloadPass>, MapError> {
    let plan = plan_grid(spec, tile, GridMode::Reload)?;
    let single = plan.layers.len() == 1;
    Ok(plan
        .layers
        .iter()
        .map(|lp| {
            let params = plan.dies[lp.dies.clone()].iter().map(|d| d.footprint_bytes).sum();
            let spill = !single;
            ReloadPass {
                layer: lp.layer,
                n: lp.n,
                param_bytes: params,
                state_load_bytes: if spill { lp.n * lp.n * lp.nh_tile + lp.n * lp.nh_tile } else { 0 },
                feature_bytes: lp.n * lp.n * lp.ni_tile,
                state_store_bytes: if spill { 2 * lp.n * lp.nh_tile } else { 0 },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(layers: usize, nh: usize, mode: GridMode) -> GridPlan {
        plan_grid(&NetworkSpec::uniform(layers, nh, nh, None), &TileSpec::default(), mode).unwrap()
    }

    #[test]
    fn footprint_examples() {
        assert_eq!(memory_footprint(96, 96, true, true, None), 74_400);
        assert_eq!(memory_footprint(0, 0, true, true, None), 0);
        assert!(74_400 <= TileSpec::default().sram_bytes);
    }

    #[test]
    fn table_grid_sizes() {
        assert_eq!(plan(1, 96, GridMode::Stacked).total_dies, 1);
        assert_eq!(plan(1, 192, GridMode::Stacked).summary(), "2x2, 4 dies");
        assert_eq!(plan(3, 384, GridMode::Stacked).total_dies, 48);
        assert_eq!(plan(3, 480, GridMode::Stacked).total_dies, 75);
        assert_eq!(plan(2, 192, GridMode::Reload).total_dies, 4);
    }

    #[test]
    fn masters_are_rightmost_column() {
        let p = plan(2, 288, GridMode::Stacked);
        for d in &p.dies {
            let n = p.layers[d.layer].n;
            assert_eq!(d.role == Role::Master, d.col == n - 1);
        }
        for d in p.dies.iter().filter(|d| d.role == Role::Slave) {
            let out: Vec<_> = p
                .links_of(LinkKind::Reduction)
                .filter(|l| l.src == Endpoint::Die(d.id))
                .collect();
            assert_eq!(out.len(), 1);
            assert_eq!(out[0].dst, vec![Endpoint::Die(d.id + 1)]);
        }
    }

    #[test]
    fn over_capacity_names_die() {
        let tile = TileSpec { sram_bytes: 1000, ..TileSpec::default() };
        let err = plan_grid(&NetworkSpec::uniform(1, 96, 96, None), &tile, GridMode::Stacked).unwrap_err();
        assert!(matches!(err, MapError::Capacity { layer: 0, row: 0, col: 0, bytes: 74_400, .. }));
    }

    #[test]
    fn bad_link_width_rejected() {
        let tile = TileSpec { link_data_bits: 3, ..TileSpec::default() };
        assert!(tile.validate().is_err());
    }

    #[test]
    fn pins() {
        let p = plan(1, 192, GridMode::Stacked);
        assert_eq!(pin_budget(&p, InputCount::Columns, false).total_min, 29);
        assert_eq!(pin_budget(&p, InputCount::AllDies, false).total_min, 2 + 3 + 24 + 12);
        assert_eq!(pin_budget(&p, InputCount::Columns, true).total_min, 17);
        let p1 = plan(1, 96, GridMode::Stacked);
        assert_eq!(pin_budget(&p1, InputCount::Columns, false).total_min, 17);
    }

    #[test]
    fn reload_passes() {
        let tile = TileSpec::default();
        let one = reload_schedule(&NetworkSpec::uniform(1, 96, 96, None), &tile).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].state_load_bytes + one[0].state_store_bytes, 0);
        let two = reload_schedule(&NetworkSpec::uniform(2, 96, 96, None), &tile).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two[1].state_load_bytes, 2 * 96);
        assert_eq!(two[1].param_bytes, 74_400);
        let wide = reload_schedule(&NetworkSpec::uniform(2, 192, 192, None), &tile).unwrap();
        assert!(wide.iter().all(|p| p.n == 2));
    }

    #[test]
    fn stacked_consumers_listen_on_distribution() {
        let p = plan(2, 192, GridMode::Stacked);
        let (l0, l1) = (&p.layers[0], &p.layers[1]);
        let relay = p.find_link(LinkKind::Hidden, Endpoint::Die(l0.master(1)), Endpoint::Die(l0.master(0))).unwrap();
        assert!(relay.dst.contains(&Endpoint::Die(l1.die_id(0, 1))));
        assert!(relay.dst.contains(&Endpoint::Die(l1.die_id(1, 1))));
        let bc = p.find_link(LinkKind::Hidden, Endpoint::Die(l0.master(0)), Endpoint::Die(l0.die_id(1, 0))).unwrap();
        assert!(bc.dst.contains(&Endpoint::Die(l1.die_id(1, 0))));
    }

    #[test]
    fn plan_serializes() {
        let p = plan(1, 192, GridMode::ChipSelect);
        let text = serde_json::to_string(&p).unwrap();
        let back: GridPlan = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(p.links_of(LinkKind::Param).count(), 1);
    }
}
