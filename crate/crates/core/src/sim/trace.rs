// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! Phase-level execution record.

use super::link::LinkCounters;
use crate::lstm_ref::Gate;
use crate::mapper::{Endpoint, LinkKind};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseKind {
    ParamLoad,
    FeatureLoad,
    HandOff,
    StateLoad,
    GateCompute,
    Reduction,
    ElementWise,
    Relay,
    Broadcast,
    FcCompute,
    FcReduction,
    FcActivation,
    WriteBack,
    StateStore,
}

impl PhaseKind {
    pub fn name(self) -> &'static str {
        match self {
            PhaseKind::ParamLoad => "param-load",
            PhaseKind::FeatureLoad => "feature-load",
            PhaseKind::HandOff => "hand-off",
            PhaseKind::StateLoad => "state-load",
            PhaseKind::GateCompute => "gate-compute",
            PhaseKind::Reduction => "reduction",
            PhaseKind::ElementWise => "element-wise",
            PhaseKind::Relay => "relay",
            PhaseKind::Broadcast => "broadcast",
            PhaseKind::FcCompute => "fc-compute",
            PhaseKind::FcReduction => "fc-reduction",
            PhaseKind::FcActivation => "fc-activation",
            PhaseKind::WriteBack => "write-back",
            PhaseKind::StateStore => "state-store",
        }
    }
}

/// What a phase belongs to when reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    /// One-off configuration (resident parameters).
    Config,
    /// Recurrent layer computation and data movement.
    Inference,
    /// Output layer and result write-back.
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activity {
    Active,
    /// Waiting on another die of the same grid.
    Stalled,
    /// Belongs to a grid that is not executing.
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkUsage {
    pub link: usize,
    pub kind: LinkKind,
    pub src: Endpoint,
    pub receivers: usize,
    #[serde(flatten)]
    pub counters: LinkCounters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub kind: PhaseKind,
    pub category: Category,
    pub step: Option<usize>,
    pub layer: Option<usize>,
    pub gate: Option<Gate>,
    pub hop: Option<usize>,
    pub start: u64,
    pub end: u64,
    /// Indexed by physical die.
    pub activity: Vec<Activity>,
    pub links: Vec<LinkUsage>,
}

impl PhaseRecord {
    pub fn cycles(&self) -> u64 {
        self.end - self.start
    }

    pub fn label(&self) -> String {
        let mut s = self.kind.name().to_string();
        if let Some(g) = self.gate {
            s.push(':');
            s.push(g.letter());
        }
        if let Some(h) = self.hop {
            s.push_str(&format!("#{h}"));
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub dies: usize,
    pub steps: usize,
    pub phases: Vec<PhaseRecord>,
}

impl PhaseTrace {
    pub fn new(dies: usize) -> Self {
        Self { dies, steps: 0, phases: Vec::new() }
    }

    pub fn total_cycles(&self) -> u64 {
        self.phases.last().map_or(0, |p| p.end) - self.phases.first().map_or(0, |p| p.start)
    }

    /// Summed duration of the phases in the given categories.
    pub fn cycles_in(&self, cats: &[Category]) -> u64 {
        self.phases.iter().filter(|p| cats.contains(&p.category)).map(|p| p.cycles()).sum()
    }

    pub fn link_totals(&self) -> LinkCounters {
        let mut t = LinkCounters::default();
        for p in &self.phases {
            for u in &p.links {
                t.add(&u.counters);
            }
        }
        t
    }

    pub fn phases_of(&self, kind: PhaseKind) -> impl Iterator<Item = &PhaseRecord> {
        self.phases.iter().filter(move |p| p.kind == kind)
    }

    pub fn append(&mut self, other: PhaseTrace) {
        self.steps += other.steps;
        self.phases.extend(other.phases);
    }

    pub fn write_json<W: Write>(&self, out: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(out, self)
    }

    /// One row per die and per link of every phase.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| std::io::Error::other(e);
        w.write_record([
            "start_cycle", "end_cycle", "step", "layer", "phase", "category", "die", "activity", "link", "link_kind",
            "bits_sent", "bits_received", "toggles",
        ])
        .map_err(io)?;
        let opt = |v: Option<usize>| v.map_or(String::new(), |v| v.to_string());
        for p in &self.phases {
            let head = [p.start.to_string(), p.end.to_string(), opt(p.step), opt(p.layer), p.label()];
            let cat = format!("{:?}", p.category).to_lowercase();
            for (die, a) in p.activity.iter().enumerate() {
                let mut row = head.to_vec();
                row.extend([cat.clone(), die.to_string(), format!("{a:?}").to_lowercase()]);
                row.extend([String::new(), String::new(), String::new(), String::new(), String::new()]);
                w.write_record(&row).map_err(io)?;
            }
            for u in &p.links {
                let die = match u.src {
                    Endpoint::Die(d) => d.to_string(),
                    Endpoint::Host => "host".into(),
                };
                let mut row = head.to_vec();
                row.extend([cat.clone(), die, String::new(), u.link.to_string(), format!("{:?}", u.kind).to_lowercase()]);
                row.extend([
                    u.counters.bits_sent.to_string(),
                    u.counters.bits_received.to_string(),
                    u.counters.toggles.to_string(),
                ]);
                w.write_record(&row).map_err(io)?;
            }
        }
        w.flush()
    }
}
