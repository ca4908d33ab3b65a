// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! Transaction-level simulation of a planned grid.
//!
//! Compute phases advance by their cycle cost; every transfer is stepped
//! beat by beat over the links, and the data the dies compute with is the
//! data that came off the links.

mod die;
mod engine;
pub mod link;
pub mod trace;

pub use die::Die;
pub use engine::{simulate, Grid, SimRun};
pub use link::{Link, LinkCounters, ReadyModel};
pub use trace::{Activity, Category, LinkUsage, PhaseKind, PhaseRecord, PhaseTrace};

use crate::mapper::{Endpoint, LinkKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("handshake deadlock on link {link} ({kind:?} from {src:?}): ready never asserted, blocked at cycle {cycle}")]
    Deadlock { link: usize, kind: LinkKind, src: Endpoint, cycle: u64 },
    #[error("parameters do not match the plan: {0}")]
    Params(String),
    #[error("input vector has {actual} elements, the plan expects {expected}")]
    Input { expected: usize, actual: usize },
    #[error("die {die} is a slave and cannot run {op}")]
    Role { die: usize, op: &'static str },
    #[error("parameters have not been loaded")]
    NotLoaded,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Length of the hidden-state loop of a gate computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopMode {
    /// Every unit iterates over the full die capacity.
    #[default]
    FixedCapacity,
    /// The loop stops after the tile's hidden elements.
    Truncate,
}

/// Cycle costs of the non-transfer phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleModel {
    /// Per-gate overhead on top of one cycle per MAC.
    pub c_gate: u64,
    /// Activation and element-wise work on the masters, per step.
    pub c_fixed: u64,
    pub loop_mode: LoopMode,
}

impl Default for CycleModel {
    fn default() -> Self {
        Self { c_gate: 0, c_fixed: 74, loop_mode: LoopMode::FixedCapacity }
    }
}

impl CycleModel {
    pub fn h_loop(&self, nh_tile: usize, nh_capacity: usize) -> u64 {
        match self.loop_mode {
            LoopMode::FixedCapacity => nh_capacity.max(nh_tile) as u64,
            LoopMode::Truncate => nh_tile as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub cycles: CycleModel,
    /// Ready behaviour of every link without an override.
    pub ready: ReadyModel,
    /// `(link id, model)` pairs.
    pub ready_overrides: Vec<(usize, ReadyModel)>,
    /// Consecutive not-ready cycles tolerated before reporting a deadlock.
    pub watchdog: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { cycles: CycleModel::default(), ready: ReadyModel::Always, ready_overrides: Vec::new(), watchdog: 4096 }
    }
}
