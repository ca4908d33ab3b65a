// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

use super::die::Die;
use super::link::{pack_codes, pack_partials, unpack_codes, unpack_partials, Link};
use super::trace::{Activity, Category, LinkUsage, PhaseKind, PhaseRecord, PhaseTrace};
use super::{SimConfig, SimError};
use crate::actlut::ActLuts;
use crate::lstm_ref::{FormatSet, Gate, LstmState, Matrix, NetworkParams, QuantNetwork};
use crate::mapper::{Endpoint, GridMode, GridPlan, LayerPlan, LinkKind};
use std::collections::HashMap;
use std::ops::Range;

struct Transfer {
    link: usize,
    beats: Vec<u8>,
    receivers: usize,
}

struct PhaseMeta {
    kind: PhaseKind,
    category: Category,
    layer: Option<usize>,
    gate: Option<Gate>,
    hop: Option<usize>,
}

impl PhaseMeta {
    fn new(kind: PhaseKind, category: Category, layer: usize) -> Self {
        Self { kind, category, layer: Some(layer), gate: None, hop: None }
    }

    fn gate(mut self, g: Gate) -> Self {
        self.gate = Some(g);
        self
    }

    fn hop(mut self, h: usize) -> Self {
        self.hop = Some(h);
        self
    }
}

/// Outputs and trace of a complete run.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub outputs: Vec<Vec<i8>>,
    pub trace: PhaseTrace,
}

/// A planned grid of dies and links with a global cycle counter.
pub struct Grid {
    plan: GridPlan,
    cfg: SimConfig,
    formats: FormatSet,
    luts: ActLuts,
    dies: Vec<Die>,
    links: Vec<Link>,
    cycle: u64,
    step: usize,
    trace: PhaseTrace,
    param_link: Vec<usize>,
    red_link: HashMap<usize, usize>,
    out_link: HashMap<usize, usize>,
    /// `(src, first dst)` of hidden links.
    hidden_link: HashMap<(usize, usize), usize>,
    host_params: Option<NetworkParams<i8>>,
    host_state: Vec<LstmState<i8>>,
}

fn tile_matrix(m: &Matrix<i8>, rows: &Range<usize>, cols: &Range<usize>, rt: usize, ct: usize) -> Vec<i8> {
    let mut out = vec![0i8; rt * ct];
    for (ri, r) in rows.clone().enumerate() {
        for (ci, c) in cols.clone().enumerate() {
            out[ri * ct + ci] = m.get(r, c);
        }
    }
    out
}

fn tile_vec(v: &[i8], range: &Range<usize>, len: usize) -> Vec<i8> {
    let mut out = vec![0i8; len];
    out[..range.len()].copy_from_slice(&v[range.clone()]);
    out
}

impl Grid {
    pub fn new(plan: GridPlan, cfg: SimConfig, formats: FormatSet) -> Result<Self, SimError> {
        formats.validate().map_err(|e| SimError::Config(e.to_string()))?;
        plan.tile.validate().map_err(|e| SimError::Config(e.to_string()))?;
        let width = plan.tile.link_data_bits;
        let no_t = plan.fc.as_ref().map_or(0, |f| f.no_tile);
        let n_layers = plan.layers.len();
        let dies: Vec<Die> = plan
            .dies
            .iter()
            .map(|d| {
                let lp = &plan.layers[d.layer];
                let no = if d.layer + 1 == n_layers { no_t } else { 0 };
                Die::new(d, lp.ni_tile, lp.nh_tile, no, plan.spec.peephole)
            })
            .collect();
        let links: Vec<Link> = plan
            .links
            .iter()
            .map(|l| {
                let ready = cfg.ready_overrides.iter().find(|(id, _)| *id == l.id).map_or(cfg.ready, |(_, m)| *m);
                Link::new(l, width, ready)
            })
            .collect();
        let mut param_link = vec![usize::MAX; dies.len()];
        let mut red_link = HashMap::new();
        let mut out_link = HashMap::new();
        let mut hidden_link = HashMap::new();
        for l in &plan.links {
            match (l.kind, l.src) {
                (LinkKind::Param, _) => {
                    for d in &l.dst {
                        if let Endpoint::Die(d) = d {
                            param_link[*d] = l.id;
                        }
                    }
                }
                (LinkKind::Reduction, Endpoint::Die(s)) => {
                    red_link.insert(s, l.id);
                }
                (LinkKind::Output, Endpoint::Die(s)) => {
                    out_link.insert(s, l.id);
                }
                (LinkKind::Hidden, Endpoint::Die(s)) => {
                    if let Some(Endpoint::Die(d)) = l.dst.first() {
                        hidden_link.insert((s, *d), l.id);
                    }
                }
                _ => {}
            }
        }
        let host_state = plan.layers.iter().map(|l| LstmState::zeros(l.n_hidden)).collect();
        let trace = PhaseTrace::new(plan.total_dies);
        Ok(Self {
            luts: ActLuts::new(formats.state, formats.gate),
            plan,
            cfg,
            formats,
            dies,
            links,
            cycle: 0,
            step: 0,
            trace,
            param_link,
            red_link,
            out_link,
            hidden_link,
            host_params: None,
            host_state,
        })
    }

    pub fn plan(&self) -> &GridPlan {
        &self.plan
    }

    pub fn dies(&self) -> &[Die] {
        &self.dies
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn trace(&self) -> &PhaseTrace {
        &self.trace
    }

    pub fn take_trace(&mut self) -> PhaseTrace {
        std::mem::replace(&mut self.trace, PhaseTrace::new(self.plan.total_dies))
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    fn width(&self) -> u32 {
        self.plan.tile.link_data_bits
    }

    fn word(&self) -> u32 {
        self.plan.tile.word_bits
    }

    fn reloading(&self) -> bool {
        self.plan.mode == GridMode::Reload && self.plan.layers.len() > 1
    }

    fn layer(&self, l: usize) -> LayerPlan {
        self.plan.layers[l].clone()
    }

    fn activity(&self, f: impl Fn(&Die) -> Option<Activity>) -> Vec<Activity> {
        let mut a = vec![Activity::Idle; self.plan.total_dies];
        for d in &self.dies {
            if let Some(x) = f(d) {
                let slot = &mut a[d.physical];
                if *slot != Activity::Active {
                    *slot = x;
                }
            }
        }
        a
    }

    /// Layer dies active when `pred` holds, stalled otherwise.
    fn layer_activity(&self, layer: usize, pred: impl Fn(&Die) -> bool) -> Vec<Activity> {
        self.activity(|d| {
            (d.layer == layer).then(|| if pred(d) { Activity::Active } else { Activity::Stalled })
        })
    }

    fn run_phase(
        &mut self,
        meta: PhaseMeta,
        min_cycles: u64,
        transfers: Vec<Transfer>,
        activity: Vec<Activity>,
    ) -> Result<Vec<Vec<u8>>, SimError> {
        let start = self.cycle;
        let mut cursor: HashMap<usize, u64> = HashMap::new();
        let mut delivered = Vec::with_capacity(transfers.len());
        let mut usage: Vec<LinkUsage> = Vec::new();
        for t in transfers {
            let at = *cursor.get(&t.link).unwrap_or(&start);
            let link = &mut self.links[t.link];
            let d = link.send(at, &t.beats, t.receivers, self.cfg.watchdog)?;
            cursor.insert(t.link, d.end_cycle);
            match usage.iter_mut().find(|u| u.link == t.link) {
                Some(u) => {
                    u.counters.add(&d.usage);
                    u.receivers = u.receivers.max(t.receivers);
                }
                None => usage.push(LinkUsage {
                    link: t.link,
                    kind: link.kind,
                    src: link.src,
                    receivers: t.receivers,
                    counters: d.usage,
                }),
            }
            delivered.push(d.beats);
        }
        let end = cursor.values().copied().fold(start + min_cycles, u64::max);
        self.trace.phases.push(PhaseRecord {
            kind: meta.kind,
            category: meta.category,
            step: Some(self.step),
            layer: meta.layer,
            gate: meta.gate,
            hop: meta.hop,
            start,
            end,
            activity,
            links: usage,
        });
        self.cycle = end;
        Ok(delivered)
    }

    fn image(&self, die: usize, p: &NetworkParams<i8>) -> Vec<i8> {
        let dp = &self.plan.dies[die];
        let d = &self.dies[die];
        let lp = &p.layers[dp.layer];
        let mut img = Vec::with_capacity(d.param_bytes());
        for k in 0..4 {
            img.extend(tile_matrix(&lp.w_x[k], &dp.hidden_rows, &dp.x_cols, d.nh_t, d.ni_t));
            img.extend(tile_matrix(&lp.w_h[k], &dp.hidden_rows, &dp.h_cols, d.nh_t, d.nh_t));
        }
        if d.is_master() {
            if self.plan.spec.peephole {
                for k in 0..3 {
                    img.extend(tile_vec(&lp.peephole[k], &dp.hidden_rows, d.nh_t));
                }
            }
            for k in 0..4 {
                img.extend(tile_vec(&lp.bias[k], &dp.hidden_rows, d.nh_t));
            }
        }
        if let (Some(fc), Some(rows)) = (&p.fc, &dp.fc_rows) {
            img.extend(tile_matrix(&fc.w, rows, &dp.h_cols, d.no_t, d.nh_t));
            if d.is_master() {
                img.extend(tile_vec(&fc.b, rows, d.no_t));
            }
        }
        img
    }

    fn stream_params(&mut self, layer: Option<usize>, category: Category) -> Result<(), SimError> {
        let p = self.host_params.take().ok_or(SimError::NotLoaded)?;
        let ids: Vec<usize> = self.dies.iter().filter(|d| layer.is_none_or(|l| d.layer == l)).map(|d| d.id).collect();
        let transfers = ids
            .iter()
            .map(|&id| Transfer {
                link: self.param_link[id],
                beats: pack_codes(&self.image(id, &p), self.word(), self.width()),
                receivers: 1,
            })
            .collect();
        let act = self.activity(|d| ids.contains(&d.id).then_some(Activity::Active));
        let meta = PhaseMeta { kind: PhaseKind::ParamLoad, category, layer, gate: None, hop: None };
        let got = self.run_phase(meta, 0, transfers, act);
        self.host_params = Some(p);
        let got = got?;
        for (&id, beats) in ids.iter().zip(got) {
            let img = unpack_codes(&beats, self.word(), self.width());
            self.dies[id].load_image(&img)?;
        }
        Ok(())
    }

    /// Checks the parameters against the plan and streams every die's image.
    /// With weight reloading over several layers the images are kept on the
    /// host and streamed before each layer pass instead.
    pub fn load_parameters(&mut self, params: &NetworkParams<i8>) -> Result<(), SimError> {
        self.plan.spec.check_params(params).map_err(|e| SimError::Params(e.to_string()))?;
        if !self.plan.spec.peephole && params.layers.iter().any(|l| !l.is_vanilla()) {
            return Err(SimError::Params("plan has no peephole storage but the parameters use peepholes".into()));
        }
        self.host_params = Some(params.clone());
        if self.reloading() {
            return Ok(());
        }
        self.stream_params(None, Category::Config)
    }

    /// One time step through every layer. Returns the output-layer vector,
    /// or the last layer's hidden state without an output layer.
    pub fn step_inference(&mut self, x: &[i8]) -> Result<Vec<i8>, SimError> {
        let n_in = self.plan.spec.n_inputs();
        if x.len() != n_in {
            return Err(SimError::Input { expected: n_in, actual: x.len() });
        }
        if self.host_params.is_none() || (!self.reloading() && self.dies.iter().any(|d| !d.loaded)) {
            return Err(SimError::NotLoaded);
        }
        let out = if self.reloading() { self.step_reload(x)? } else { self.step_resident(x)? };
        self.step += 1;
        self.trace.steps += 1;
        Ok(out)
    }

    pub fn run_sequence(&mut self, features: &[Vec<i8>]) -> Result<Vec<Vec<i8>>, SimError> {
        features.iter().map(|x| self.step_inference(x)).collect()
    }

    /// Same as [`Grid::run_sequence`]; requires a weight-reloading plan.
    pub fn run_reload(&mut self, features: &[Vec<i8>]) -> Result<Vec<Vec<i8>>, SimError> {
        if self.plan.mode != GridMode::Reload {
            return Err(SimError::Config("run_reload needs a weight-reloading plan".into()));
        }
        self.run_sequence(features)
    }

    fn step_resident(&mut self, x: &[i8]) -> Result<Vec<i8>, SimError> {
        let n_layers = self.plan.layers.len();
        for l in 0..n_layers {
            let lp = self.layer(l);
            if l == 0 {
                self.feature_load(&lp, x)?;
            } else {
                let prev = self.layer(l - 1);
                if !(prev.n > 1 && prev.n == lp.n) {
                    self.hand_off(&prev, &lp)?;
                }
            }
            self.gates(&lp)?;
            self.element_wise(&lp)?;
            let consumer = (l + 1 < n_layers).then(|| self.layer(l + 1)).filter(|c| c.n == lp.n);
            self.distribute(&lp, consumer.as_ref())?;
        }
        self.output_stage(&self.layer(n_layers - 1))
    }

    fn step_reload(&mut self, x: &[i8]) -> Result<Vec<i8>, SimError> {
        let n_layers = self.plan.layers.len();
        let mut input = x.to_vec();
        for l in 0..n_layers {
            let lp = self.layer(l);
            for d in self.dies.iter_mut().filter(|d| d.layer == l) {
                d.wipe();
            }
            self.stream_params(Some(l), Category::Inference)?;
            if self.step > 0 {
                self.state_load(&lp)?;
            }
            self.load_inputs(&lp, &input, PhaseKind::FeatureLoad)?;
            self.gates(&lp)?;
            self.element_wise(&lp)?;
            self.state_store(&lp)?;
            input = self.host_state[l].h.clone();
        }
        let last = self.layer(n_layers - 1);
        if self.plan.fc.is_some() {
            self.distribute(&last, None)?;
            self.output_stage(&last)
        } else {
            Ok(input)
        }
    }

    fn feature_load(&mut self, lp: &LayerPlan, x: &[i8]) -> Result<(), SimError> {
        self.load_inputs(lp, x, PhaseKind::FeatureLoad)
    }

    /// Input tile `j` to every die of column `j` over the parameter ports.
    fn load_inputs(&mut self, lp: &LayerPlan, x: &[i8], kind: PhaseKind) -> Result<(), SimError> {
        let (w, wb) = (self.width(), self.word());
        let n = lp.n;
        let shared = self.plan.mode == GridMode::ChipSelect;
        let mut transfers = Vec::new();
        let mut targets: Vec<Vec<usize>> = Vec::new();
        for j in 0..n {
            let cols = self.plan.dies[lp.die_id(0, j)].x_cols.clone();
            let beats = pack_codes(&tile_vec(x, &cols, lp.ni_tile), wb, w);
            let column: Vec<usize> = (0..n).map(|r| lp.die_id(r, j)).collect();
            if shared {
                transfers.push(Transfer { link: self.param_link[column[0]], beats, receivers: n });
                targets.push(column);
            } else {
                for id in column {
                    transfers.push(Transfer { link: self.param_link[id], beats: beats.clone(), receivers: 1 });
                    targets.push(vec![id]);
                }
            }
        }
        let act = self.layer_activity(lp.layer, |_| true);
        let got = self.run_phase(PhaseMeta::new(kind, Category::Inference, lp.layer), 0, transfers, act)?;
        for (ids, beats) in targets.into_iter().zip(got) {
            let v = unpack_codes(&beats, wb, w);
            for id in ids {
                self.dies[id].x = v.clone();
            }
        }
        Ok(())
    }

    /// Producer masters send their hidden tiles one after another to every
    /// consumer die, which keeps the elements of its input tile.
    fn hand_off(&mut self, prod: &LayerPlan, cons: &LayerPlan) -> Result<(), SimError> {
        let (w, wb) = (self.width(), self.word());
        let first_cons = cons.die_id(0, 0);
        for i in 0..prod.n {
            let src = prod.master(i);
            let link = self.hidden_link[&(src, first_cons)];
            let beats = pack_codes(&self.dies[src].h_out, wb, w);
            let receivers = cons.n * cons.n;
            let act = self.activity(|d| {
                if d.layer == cons.layer || d.id == src {
                    Some(Activity::Active)
                } else if d.layer == prod.layer {
                    Some(Activity::Stalled)
                } else {
                    None
                }
            });
            let meta = PhaseMeta::new(PhaseKind::HandOff, Category::Inference, cons.layer).hop(i);
            let got = self.run_phase(meta, 0, vec![Transfer { link, beats, receivers }], act)?;
            let tile = unpack_codes(&got[0], wb, w);
            let rows = self.plan.dies[src].hidden_rows.clone();
            for id in cons.dies.clone() {
                let cols = self.plan.dies[id].x_cols.clone();
                for (k, g) in rows.clone().enumerate() {
                    if cols.contains(&g) {
                        self.dies[id].x[g - cols.start] = tile[k];
                    }
                }
            }
        }
        Ok(())
    }

    fn h_loop(&self, lp: &LayerPlan) -> u64 {
        self.cfg.cycles.h_loop(lp.nh_tile, self.plan.tile.nh_capacity)
    }

    fn gates(&mut self, lp: &LayerPlan) -> Result<(), SimError> {
        let (w, wb) = (self.width(), self.word());
        let f = self.formats;
        for g in Gate::ALL {
            for id in lp.dies.clone() {
                self.dies[id].compute_gate(g, &f);
            }
            let cost = lp.ni_tile as u64 + self.h_loop(lp) + self.cfg.cycles.c_gate;
            let act = self.layer_activity(lp.layer, |_| true);
            let meta = PhaseMeta::new(PhaseKind::GateCompute, Category::Inference, lp.layer).gate(g);
            self.run_phase(meta, cost, Vec::new(), act)?;
            for hop in 0..lp.n - 1 {
                let senders: Vec<usize> = (0..lp.n).map(|i| lp.die_id(i, hop)).collect();
                let transfers = senders
                    .iter()
                    .map(|&s| Transfer {
                        link: self.red_link[&s],
                        beats: pack_partials(&self.dies[s].partial_values(g), wb, w),
                        receivers: 1,
                    })
                    .collect();
                let act = self.layer_activity(lp.layer, |d| d.col == hop || d.col == hop + 1);
                let meta = PhaseMeta::new(PhaseKind::Reduction, Category::Inference, lp.layer).gate(g).hop(hop);
                let got = self.run_phase(meta, 0, transfers, act)?;
                for (&s, beats) in senders.iter().zip(got) {
                    let v = unpack_partials(&beats, wb, w);
                    self.dies[s + 1].combine(g, &v, &f);
                }
            }
        }
        Ok(())
    }

    fn element_wise(&mut self, lp: &LayerPlan) -> Result<(), SimError> {
        let f = self.formats;
        let act = self.layer_activity(lp.layer, |d| d.is_master());
        let meta = PhaseMeta::new(PhaseKind::ElementWise, Category::Inference, lp.layer);
        self.run_phase(meta, self.cfg.cycles.c_fixed, Vec::new(), act)?;
        for i in 0..lp.n {
            let m = lp.master(i);
            let d = &mut self.dies[m];
            d.element_wise(&f, &self.luts)?;
        }
        // the bottom master's own tile is the recurrent operand of its column
        let last = lp.master(lp.n - 1);
        let d = &mut self.dies[last];
        d.h_in = d.h_out.clone();
        Ok(())
    }

    /// Relay of tile `n-1` up the master column, then one broadcast of tile
    /// `j` from master `j` down column `j`. Consumer columns of an equally
    /// sized next grid latch the same beats as their input tiles.
    fn distribute(&mut self, lp: &LayerPlan, consumer: Option<&LayerPlan>) -> Result<(), SimError> {
        let n = lp.n;
        if n < 2 {
            return Ok(());
        }
        let (w, wb) = (self.width(), self.word());
        for k in 1..n {
            let (src, dst) = (lp.master(n - k), lp.master(n - k - 1));
            let link = self.hidden_link[&(src, dst)];
            let payload = if k == 1 { &self.dies[src].h_out } else { &self.dies[src].h_in };
            let beats = pack_codes(payload, wb, w);
            let cons_col: Vec<usize> = match consumer {
                Some(c) if k == 1 => (0..n).map(|r| c.die_id(r, n - 1)).collect(),
                _ => Vec::new(),
            };
            let act = self.activity(|d| {
                if d.id == src || d.id == dst || cons_col.contains(&d.id) {
                    Some(Activity::Active)
                } else if d.layer == lp.layer {
                    Some(Activity::Stalled)
                } else {
                    None
                }
            });
            let receivers = 1 + cons_col.len();
            let meta = PhaseMeta::new(PhaseKind::Relay, Category::Inference, lp.layer).hop(k - 1);
            let got = self.run_phase(meta, 0, vec![Transfer { link, beats, receivers }], act)?;
            let v = unpack_codes(&got[0], wb, w);
            self.dies[dst].h_in = v.clone();
            for id in cons_col {
                self.dies[id].x = v.clone();
            }
        }
        let mut transfers = Vec::new();
        let mut targets = Vec::new();
        for j in 0..n - 1 {
            let src = lp.master(j);
            let link = self.hidden_link[&(src, lp.die_id(0, j))];
            let mut own: Vec<usize> = (0..n).map(|r| lp.die_id(r, j)).collect();
            let cons: Vec<usize> = consumer.map_or(Vec::new(), |c| (0..n).map(|r| c.die_id(r, j)).collect());
            transfers.push(Transfer {
                link,
                beats: pack_codes(&self.dies[src].h_out, wb, w),
                receivers: own.len() + cons.len(),
            });
            own.extend(cons.iter().map(|&c| c | CONSUMER));
            targets.push(own);
        }
        let cons_layer = consumer.map(|c| c.layer);
        let act = self.activity(|d| {
            if d.layer == lp.layer && (d.is_master() && d.row + 1 < n || !d.is_master()) || Some(d.layer) == cons_layer {
                Some(Activity::Active)
            } else if d.layer == lp.layer {
                Some(Activity::Stalled)
            } else {
                None
            }
        });
        let meta = PhaseMeta::new(PhaseKind::Broadcast, Category::Inference, lp.layer);
        let got = self.run_phase(meta, 0, transfers, act)?;
        for (ids, beats) in targets.into_iter().zip(got) {
            let v = unpack_codes(&beats, wb, w);
            for t in ids {
                if t & CONSUMER != 0 {
                    self.dies[t & !CONSUMER].x = v.clone();
                } else {
                    self.dies[t].h_in = v.clone();
                }
            }
        }
        Ok(())
    }

    fn output_stage(&mut self, lp: &LayerPlan) -> Result<Vec<i8>, SimError> {
        let (w, wb) = (self.width(), self.word());
        let f = self.formats;
        let n = lp.n;
        let masters: Vec<usize> = (0..n).map(|i| lp.master(i)).collect();
        let (payloads, rows, width): (Vec<Vec<i8>>, Vec<Range<usize>>, usize) = if let Some(fc) = self.plan.fc.clone() {
            for id in lp.dies.clone() {
                self.dies[id].fc_compute(&f);
            }
            let cost = self.h_loop(lp) + self.cfg.cycles.c_gate;
            let act = self.layer_activity(lp.layer, |_| true);
            self.run_phase(PhaseMeta::new(PhaseKind::FcCompute, Category::Output, lp.layer), cost, Vec::new(), act)?;
            for hop in 0..n - 1 {
                let senders: Vec<usize> = (0..n).map(|i| lp.die_id(i, hop)).collect();
                let transfers = senders
                    .iter()
                    .map(|&s| Transfer {
                        link: self.red_link[&s],
                        beats: pack_partials(&self.dies[s].fc_values(), wb, w),
                        receivers: 1,
                    })
                    .collect();
                let act = self.layer_activity(lp.layer, |d| d.col == hop || d.col == hop + 1);
                let meta = PhaseMeta::new(PhaseKind::FcReduction, Category::Output, lp.layer).hop(hop);
                let got = self.run_phase(meta, 0, transfers, act)?;
                for (&s, beats) in senders.iter().zip(got) {
                    let v = unpack_partials(&beats, wb, w);
                    self.dies[s + 1].fc_combine(&v, &f);
                }
            }
            let act = self.layer_activity(lp.layer, |d| d.is_master());
            let meta = PhaseMeta::new(PhaseKind::FcActivation, Category::Output, lp.layer);
            self.run_phase(meta, self.cfg.cycles.c_fixed, Vec::new(), act)?;
            for &m in &masters {
                self.dies[m].fc_activate(&f, &self.luts)?;
            }
            let rows = masters.iter().map(|&m| self.plan.dies[m].fc_rows.clone().unwrap()).collect();
            (masters.iter().map(|&m| self.dies[m].y.clone()).collect(), rows, fc.n_out)
        } else {
            let rows = masters.iter().map(|&m| self.plan.dies[m].hidden_rows.clone()).collect();
            (masters.iter().map(|&m| self.dies[m].h_out.clone()).collect(), rows, lp.n_hidden)
        };
        let transfers = masters
            .iter()
            .zip(&payloads)
            .map(|(&m, p)| Transfer { link: self.out_link[&m], beats: pack_codes(p, wb, w), receivers: 0 })
            .collect();
        let act = self.layer_activity(lp.layer, |d| d.is_master());
        let got = self.run_phase(PhaseMeta::new(PhaseKind::WriteBack, Category::Output, lp.layer), 0, transfers, act)?;
        let mut out = vec![0i8; width];
        for (beats, r) in got.iter().zip(rows) {
            let v = unpack_codes(beats, wb, w);
            out[r.clone()].copy_from_slice(&v[..r.len()]);
        }
        Ok(out)
    }

    /// `h_{t-1}` tile `j` to every die of column `j`, then `c_{t-1}` tile
    /// `i` to master `i`, over the parameter ports.
    fn state_load(&mut self, lp: &LayerPlan) -> Result<(), SimError> {
        let (w, wb) = (self.width(), self.word());
        let st = self.host_state[lp.layer].clone();
        let mut transfers = Vec::new();
        let mut targets = Vec::new();
        for id in lp.dies.clone() {
            let dp = &self.plan.dies[id];
            let beats = pack_codes(&tile_vec(&st.h, &dp.h_cols, lp.nh_tile), wb, w);
            transfers.push(Transfer { link: self.param_link[id], beats, receivers: 1 });
            targets.push((id, false));
        }
        for i in 0..lp.n {
            let m = lp.master(i);
            let dp = &self.plan.dies[m];
            let beats = pack_codes(&tile_vec(&st.c, &dp.hidden_rows, lp.nh_tile), wb, w);
            transfers.push(Transfer { link: self.param_link[m], beats, receivers: 1 });
            targets.push((m, true));
        }
        let act = self.layer_activity(lp.layer, |_| true);
        let got = self.run_phase(PhaseMeta::new(PhaseKind::StateLoad, Category::Inference, lp.layer), 0, transfers, act)?;
        for ((id, is_c), beats) in targets.into_iter().zip(got) {
            let v = unpack_codes(&beats, wb, w);
            if is_c {
                self.dies[id].c = v;
            } else {
                self.dies[id].h_in = v;
            }
        }
        Ok(())
    }

    /// Masters write `h_t` then `c_t` of their row tile back to the host.
    fn state_store(&mut self, lp: &LayerPlan) -> Result<(), SimError> {
        let (w, wb) = (self.width(), self.word());
        let mut transfers = Vec::new();
        for i in 0..lp.n {
            let m = lp.master(i);
            for v in [&self.dies[m].h_out, &self.dies[m].c] {
                transfers.push(Transfer { link: self.out_link[&m], beats: pack_codes(v, wb, w), receivers: 0 });
            }
        }
        let act = self.layer_activity(lp.layer, |d| d.is_master());
        let got = self.run_phase(PhaseMeta::new(PhaseKind::StateStore, Category::Inference, lp.layer), 0, transfers, act)?;
        let st = &mut self.host_state[lp.layer];
        for (i, pair) in got.chunks(2).enumerate() {
            let rows = self.plan.dies[lp.master(i)].hidden_rows.clone();
            let h = unpack_codes(&pair[0], wb, w);
            let c = unpack_codes(&pair[1], wb, w);
            st.h[rows.clone()].copy_from_slice(&h[..rows.len()]);
            st.c[rows.clone()].copy_from_slice(&c[..rows.len()]);
        }
        Ok(())
    }
}

/// Tags consumer-grid targets inside the broadcast bookkeeping.
const CONSUMER: usize = 1 << (usize::BITS - 1);

/// Plans nothing; loads `net` onto a grid for `plan` and runs `features`.
pub fn simulate(plan: &GridPlan, net: &QuantNetwork, features: &[Vec<i8>], cfg: &SimConfig) -> Result<SimRun, SimError> {
    let mut grid = Grid::new(plan.clone(), cfg.clone(), net.formats)?;
    grid.load_parameters(&net.params)?;
    let outputs = grid.run_sequence(features)?;
    Ok(SimRun { outputs, trace: grid.take_trace() })
}
