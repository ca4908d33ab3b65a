// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! Closed-form phase schedule of a plan. Produces the same phase records as
//! the simulator, with link bit counts but without toggle counts.

use crate::lstm_ref::Gate;
use crate::mapper::{DiePlan, Endpoint, GridMode, GridPlan, LayerPlan, LinkKind, Role};
use crate::sim::{Activity, Category, CycleModel, LinkCounters, LinkUsage, PhaseKind, PhaseRecord};

struct Builder<'a> {
    plan: &'a GridPlan,
    cycles: CycleModel,
    step: usize,
    now: u64,
    out: Vec<PhaseRecord>,
    bw: u64,
    bp: u64,
    width: u64,
}

#[derive(Clone, Copy)]
struct Xfer {
    link: usize,
    beats: u64,
    receivers: usize,
}

impl<'a> Builder<'a> {
    fn link(&self, kind: LinkKind, src: Endpoint, dst: Endpoint) -> usize {
        self.plan
            .find_link(kind, src, dst)
            .unwrap_or_else(|| panic!("plan has no {kind:?} link {src:?} -> {dst:?}"))
            .id
    }

    fn param_link(&self, die: usize) -> usize {
        self.link(LinkKind::Param, Endpoint::Host, Endpoint::Die(die))
    }

    fn activity(&self, f: impl Fn(&DiePlan) -> Option<Activity>) -> Vec<Activity> {
        let mut a = vec![Activity::Idle; self.plan.total_dies];
        for d in &self.plan.dies {
            if let Some(x) = f(d) {
                let slot = &mut a[d.physical];
                if *slot != Activity::Active {
                    *slot = x;
                }
            }
        }
        a
    }

    fn layer_activity(&self, layer: usize, pred: impl Fn(&DiePlan) -> bool) -> Vec<Activity> {
        self.activity(|d| (d.layer == layer).then(|| if pred(d) { Activity::Active } else { Activity::Stalled }))
    }

    #[allow(clippy::too_many_arguments)]
    fn phase(
        &mut self,
        kind: PhaseKind,
        category: Category,
        layer: Option<usize>,
        gate: Option<Gate>,
        hop: Option<usize>,
        min: u64,
        xfers: &[Xfer],
        activity: Vec<Activity>,
    ) {
        let mut busy: Vec<(usize, u64)> = Vec::new();
        let mut links: Vec<LinkUsage> = Vec::new();
        for x in xfers {
            match busy.iter_mut().find(|(l, _)| *l == x.link) {
                Some((_, t)) => *t += x.beats,
                None => busy.push((x.link, x.beats)),
            }
            let lp = &self.plan.links[x.link];
            let c = LinkCounters {
                beats: x.beats,
                bits_sent: x.beats * self.width,
                bits_received: x.beats * self.width * x.receivers as u64,
                toggles: 0,
                cycles_active: x.beats,
                cycles_blocked: 0,
            };
            match links.iter_mut().find(|u| u.link == x.link) {
                Some(u) => {
                    u.counters.add(&c);
                    u.receivers = u.receivers.max(x.receivers);
                }
                None => links.push(LinkUsage { link: x.link, kind: lp.kind, src: lp.src, receivers: x.receivers, counters: c }),
            }
        }
        let dur = busy.iter().map(|(_, t)| *t).fold(min, u64::max);
        let start = self.now;
        self.now += dur;
        self.out.push(PhaseRecord {
            kind,
            category,
            step: Some(self.step),
            layer,
            gate,
            hop,
            start,
            end: self.now,
            activity,
            links,
        });
    }

    fn h_loop(&self, lp: &LayerPlan) -> u64 {
        self.cycles.h_loop(lp.nh_tile, self.plan.tile.nh_capacity)
    }

    fn params(&mut self, layer: Option<usize>, category: Category) {
        let dies: Vec<_> = self.plan.dies.iter().filter(|d| layer.is_none_or(|l| d.layer == l)).cloned().collect();
        let xfers: Vec<Xfer> = dies
            .iter()
            .map(|d| Xfer { link: self.param_link(d.id), beats: self.bw * d.footprint_bytes as u64, receivers: 1 })
            .collect();
        let ids: Vec<usize> = dies.iter().map(|d| d.id).collect();
        let act = self.activity(|d| ids.contains(&d.id).then_some(Activity::Active));
        self.phase(PhaseKind::ParamLoad, category, layer, None, None, 0, &xfers, act);
    }

    fn inputs(&mut self, lp: &LayerPlan) {
        let n = lp.n;
        let beats = self.bw * lp.ni_tile as u64;
        let xfers: Vec<Xfer> = if self.plan.mode == GridMode::ChipSelect {
            let link = self.param_link(lp.die_id(0, 0));
            (0..n).map(|_| Xfer { link, beats, receivers: n }).collect()
        } else {
            lp.dies.clone().map(|id| Xfer { link: self.param_link(id), beats, receivers: 1 }).collect()
        };
        let act = self.layer_activity(lp.layer, |_| true);
        self.phase(PhaseKind::FeatureLoad, Category::Inference, Some(lp.layer), None, None, 0, &xfers, act);
    }

    fn hand_off(&mut self, prod: &LayerPlan, cons: &LayerPlan) {
        for i in 0..prod.n {
            let src = prod.master(i);
            let link = self.link(LinkKind::Hidden, Endpoint::Die(src), Endpoint::Die(cons.die_id(0, 0)));
            let x = Xfer { link, beats: self.bw * prod.nh_tile as u64, receivers: cons.n * cons.n };
            let act = self.activity(|d| {
                if d.layer == cons.layer || d.id == src {
                    Some(Activity::Active)
                } else if d.layer == prod.layer {
                    Some(Activity::Stalled)
                } else {
                    None
                }
            });
            self.phase(PhaseKind::HandOff, Category::Inference, Some(cons.layer), None, Some(i), 0, &[x], act);
        }
    }

    fn reductions(&mut self, lp: &LayerPlan, kind: PhaseKind, category: Category, gate: Option<Gate>, values: usize) {
        for hop in 0..lp.n - 1 {
            let xfers: Vec<Xfer> = (0..lp.n)
                .map(|i| Xfer {
                    link: self.link(LinkKind::Reduction, Endpoint::Die(lp.die_id(i, hop)), Endpoint::Die(lp.die_id(i, hop + 1))),
                    beats: self.bp * values as u64,
                    receivers: 1,
                })
                .collect();
            let act = self.layer_activity(lp.layer, |d| d.col == hop || d.col == hop + 1);
            self.phase(kind, category, Some(lp.layer), gate, Some(hop), 0, &xfers, act);
        }
    }

    fn gates(&mut self, lp: &LayerPlan) {
        for g in Gate::ALL {
            let cost = lp.ni_tile as u64 + self.h_loop(lp) + self.cycles.c_gate;
            let act = self.layer_activity(lp.layer, |_| true);
            self.phase(PhaseKind::GateCompute, Category::Inference, Some(lp.layer), Some(g), None, cost, &[], act);
            self.reductions(lp, PhaseKind::Reduction, Category::Inference, Some(g), lp.nh_tile);
        }
    }

    fn element_wise(&mut self, lp: &LayerPlan) {
        let act = self.layer_activity(lp.layer, |d| d.role == Role::Master);
        self.phase(PhaseKind::ElementWise, Category::Inference, Some(lp.layer), None, None, self.cycles.c_fixed, &[], act);
    }

    fn distribute(&mut self, lp: &LayerPlan, consumer: Option<&LayerPlan>) {
        let n = lp.n;
        if n < 2 {
            return;
        }
        let beats = self.bw * lp.nh_tile as u64;
        for k in 1..n {
            let (src, dst) = (lp.master(n - k), lp.master(n - k - 1));
            let link = self.link(LinkKind::Hidden, Endpoint::Die(src), Endpoint::Die(dst));
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
            let x = Xfer { link, beats, receivers: 1 + cons_col.len() };
            self.phase(PhaseKind::Relay, Category::Inference, Some(lp.layer), None, Some(k - 1), 0, &[x], act);
        }
        let extra = if consumer.is_some() { n } else { 0 };
        let xfers: Vec<Xfer> = (0..n - 1)
            .map(|j| Xfer {
                link: self.link(LinkKind::Hidden, Endpoint::Die(lp.master(j)), Endpoint::Die(lp.die_id(0, j))),
                beats,
                receivers: n + extra,
            })
            .collect();
        let cons_layer = consumer.map(|c| c.layer);
        let act = self.activity(|d| {
            let master = d.role == Role::Master;
            if d.layer == lp.layer && (master && d.row + 1 < n || !master) || Some(d.layer) == cons_layer {
                Some(Activity::Active)
            } else if d.layer == lp.layer {
                Some(Activity::Stalled)
            } else {
                None
            }
        });
        self.phase(PhaseKind::Broadcast, Category::Inference, Some(lp.layer), None, None, 0, &xfers, act);
    }

    fn output(&mut self, lp: &LayerPlan) {
        let l = Some(lp.layer);
        let values = match &self.plan.fc {
            Some(fc) => {
                let cost = self.h_loop(lp) + self.cycles.c_gate;
                let act = self.layer_activity(lp.layer, |_| true);
                self.phase(PhaseKind::FcCompute, Category::Output, l, None, None, cost, &[], act);
                self.reductions(lp, PhaseKind::FcReduction, Category::Output, None, fc.no_tile);
                let act = self.layer_activity(lp.layer, |d| d.role == Role::Master);
                self.phase(PhaseKind::FcActivation, Category::Output, l, None, None, self.cycles.c_fixed, &[], act);
                fc.no_tile
            }
            None => lp.nh_tile,
        };
        let xfers: Vec<Xfer> = (0..lp.n)
            .map(|i| Xfer {
                link: self.link(LinkKind::Output, Endpoint::Die(lp.master(i)), Endpoint::Host),
                beats: self.bw * values as u64,
                receivers: 0,
            })
            .collect();
        let act = self.layer_activity(lp.layer, |d| d.role == Role::Master);
        self.phase(PhaseKind::WriteBack, Category::Output, l, None, None, 0, &xfers, act);
    }

    fn state_load(&mut self, lp: &LayerPlan) {
        let beats = self.bw * lp.nh_tile as u64;
        let mut xfers: Vec<Xfer> = lp.dies.clone().map(|id| Xfer { link: self.param_link(id), beats, receivers: 1 }).collect();
        for i in 0..lp.n {
            xfers.push(Xfer { link: self.param_link(lp.master(i)), beats, receivers: 1 });
        }
        let act = self.layer_activity(lp.layer, |_| true);
        self.phase(PhaseKind::StateLoad, Category::Inference, Some(lp.layer), None, None, 0, &xfers, act);
    }

    fn state_store(&mut self, lp: &LayerPlan) {
        let beats = self.bw * lp.nh_tile as u64;
        let mut xfers = Vec::new();
        for i in 0..lp.n {
            let link = self.link(LinkKind::Output, Endpoint::Die(lp.master(i)), Endpoint::Host);
            xfers.push(Xfer { link, beats, receivers: 0 });
            xfers.push(Xfer { link, beats, receivers: 0 });
        }
        let act = self.layer_activity(lp.layer, |d| d.role == Role::Master);
        self.phase(PhaseKind::StateStore, Category::Inference, Some(lp.layer), None, None, 0, &xfers, act);
    }
}

/// Phase records of configuration (when `config`) followed by time step
/// `step`. Cycle numbers start at zero.
pub fn schedule(plan: &GridPlan, cycles: CycleModel, step: usize, config: bool) -> Vec<PhaseRecord> {
    let mut b = Builder {
        plan,
        cycles,
        step,
        now: 0,
        out: Vec::new(),
        bw: plan.tile.beats_per_word(),
        bp: plan.tile.beats_per_partial(),
        width: plan.tile.link_data_bits as u64,
    };
    let layers = &plan.layers;
    let n_layers = layers.len();
    let reloading = plan.mode == GridMode::Reload && n_layers > 1;
    if config && !reloading {
        b.params(None, Category::Config);
    }
    if reloading {
        for lp in layers {
            b.params(Some(lp.layer), Category::Inference);
            if step > 0 {
                b.state_load(lp);
            }
            b.inputs(lp);
            b.gates(lp);
            b.element_wise(lp);
            b.state_store(lp);
        }
        if plan.fc.is_some() {
            let last = &layers[n_layers - 1];
            b.distribute(last, None);
            b.output(last);
        }
    } else {
        for (l, lp) in layers.iter().enumerate() {
            if l == 0 {
                b.inputs(lp);
            } else {
                let prev = &layers[l - 1];
                if !(prev.n > 1 && prev.n == lp.n) {
                    b.hand_off(prev, lp);
                }
            }
            b.gates(lp);
            b.element_wise(lp);
            let consumer = layers.get(l + 1).filter(|c| c.n == lp.n);
            b.distribute(lp, consumer);
        }
        b.output(&layers[n_layers - 1]);
    }
    b.out
}
