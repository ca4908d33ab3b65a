// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

use slstm::lstm_ref::*;
use slstm::mapper::*;
use slstm::perf::{analytic, report, EnergyConstants, OperatingPoint, ToggleSource, Window, TABLE4};
use slstm::sim::*;

fn small() -> TileSpec {
    TileSpec { nh_capacity: 4, ..TileSpec::default() }
}

fn spec_of(inputs: usize, hidden: &[usize], outputs: Option<usize>) -> NetworkSpec {
    let mut s = NetworkSpec::uniform(hidden.len(), inputs, hidden[0], outputs);
    for (l, &h) in hidden.iter().enumerate() {
        s.layers[l].hidden = h;
        if l > 0 {
            s.layers[l].inputs = hidden[l - 1];
        }
    }
    s
}

fn check(spec: &NetworkSpec, tile: &TileSpec, mode: GridMode, seed: u64, steps: usize) -> SimRun {
    let net = QuantNetwork::new(spec.random_codes(seed), spec.formats).unwrap();
    let xs = spec.random_feature_codes(seed, steps);
    let plan = plan_grid(spec, tile, mode).unwrap();
    let run = simulate(&plan, &net, &xs, &SimConfig::default()).unwrap();
    let gold = infer_fixed(&net, &xs, &plan.grid_dims()).unwrap();
    assert_eq!(run.outputs, gold, "{mode:?} {:?} seed {seed}", plan.grid_dims());
    run
}

const MODES: [GridMode; 3] = [GridMode::Stacked, GridMode::Reload, GridMode::ChipSelect];

#[test]
fn uniform_networks_are_bit_exact() {
    for mode in MODES {
        for layers in 1..=3 {
            for nh in [3, 4, 8, 11, 12] {
                for fc in [None, Some(5)] {
                    check(&NetworkSpec::uniform(layers, 7, nh, fc), &small(), mode, nh as u64, 3);
                }
            }
        }
    }
}

#[test]
fn unequal_grids_are_bit_exact() {
    for mode in [GridMode::Stacked, GridMode::ChipSelect] {
        for hidden in [&[12, 5][..], &[5, 12], &[4, 12], &[12, 4], &[9, 9, 3], &[3, 8, 8]] {
            for fc in [None, Some(3)] {
                let run = check(&spec_of(6, hidden, fc), &small(), mode, 11, 3);
                let expect_handoff = hidden.windows(2).any(|w| w[0].div_ceil(4) != w[1].div_ceil(4) || w[0] <= 4);
                assert_eq!(run.trace.phases_of(PhaseKind::HandOff).next().is_some(), expect_handoff, "{hidden:?}");
            }
        }
    }
}

#[test]
fn vanilla_networks_are_bit_exact() {
    let mut spec = NetworkSpec::uniform(2, 5, 8, Some(2));
    spec.peephole = false;
    for mode in MODES {
        check(&spec, &small(), mode, 4, 4);
    }
    let with = plan_grid(&NetworkSpec::uniform(1, 5, 8, None), &small(), GridMode::Stacked).unwrap();
    let without = plan_grid(&spec, &small(), GridMode::Stacked).unwrap();
    assert_eq!(with.dies[1].footprint_bytes, without.dies[1].footprint_bytes + 3 * 4);
}

#[test]
fn peepholes_rejected_without_storage() {
    let mut spec = NetworkSpec::uniform(1, 5, 8, None);
    spec.peephole = false;
    let plan = plan_grid(&spec, &small(), GridMode::Stacked).unwrap();
    let params = NetworkSpec::uniform(1, 5, 8, None).random_codes(1);
    let mut g = Grid::new(plan, SimConfig::default(), FormatSet::default()).unwrap();
    assert!(matches!(g.load_parameters(&params), Err(SimError::Params(_))));
}

#[test]
fn usage_errors() {
    let spec = NetworkSpec::uniform(1, 5, 8, None);
    let plan = plan_grid(&spec, &small(), GridMode::Stacked).unwrap();
    let mut g = Grid::new(plan, SimConfig::default(), FormatSet::default()).unwrap();
    assert_eq!(g.step_inference(&[0; 5]), Err(SimError::NotLoaded));
    g.load_parameters(&spec.random_codes(1)).unwrap();
    assert_eq!(g.step_inference(&[0; 4]), Err(SimError::Input { expected: 5, actual: 4 }));
    assert!(matches!(g.run_reload(&[vec![0; 5]]), Err(SimError::Config(_))));
    let bad = TileSpec { link_data_bits: 3, ..small() };
    assert!(plan_grid(&spec, &bad, GridMode::Stacked).is_err());
}

#[test]
fn backpressure_delays_but_preserves_results() {
    let spec = NetworkSpec::uniform(2, 7, 8, Some(3));
    let net = QuantNetwork::new(spec.random_codes(2), FormatSet::default()).unwrap();
    let xs = spec.random_feature_codes(2, 3);
    let plan = plan_grid(&spec, &small(), GridMode::Stacked).unwrap();
    let base = simulate(&plan, &net, &xs, &SimConfig::default()).unwrap();
    let cfg = SimConfig { ready: ReadyModel::Periodic { period: 5, stall: 2 }, ..SimConfig::default() };
    let slow = simulate(&plan, &net, &xs, &cfg).unwrap();
    assert_eq!(slow.outputs, base.outputs);
    assert!(slow.trace.total_cycles() > base.trace.total_cycles());
    let t = slow.trace.link_totals();
    assert!(t.cycles_blocked > 0);
    assert_eq!(t.beats, base.trace.link_totals().beats);
}

#[test]
fn stuck_link_reports_deadlock() {
    let spec = NetworkSpec::uniform(1, 7, 8, None);
    let net = QuantNetwork::new(spec.random_codes(2), FormatSet::default()).unwrap();
    let plan = plan_grid(&spec, &small(), GridMode::Stacked).unwrap();
    let red = plan.links_of(LinkKind::Reduction).next().unwrap().id;
    let cfg = SimConfig { ready_overrides: vec![(red, ReadyModel::Never)], watchdog: 64, ..SimConfig::default() };
    match simulate(&plan, &net, &spec.random_feature_codes(1, 1), &cfg) {
        Err(SimError::Deadlock { link, kind, .. }) => {
            assert_eq!(link, red);
            assert_eq!(kind, LinkKind::Reduction);
        }
        other => panic!("expected a deadlock, got {other:?}"),
    }
}

#[test]
fn traffic_is_conserved() {
    for mode in MODES {
        let spec = NetworkSpec::uniform(2, 7, 11, Some(5));
        let run = check(&spec, &small(), mode, 8, 2);
        let plan = plan_grid(&spec, &small(), mode).unwrap();
        let w = plan.tile.link_data_bits as u64;
        for p in &run.trace.phases {
            for u in &p.links {
                let c = &u.counters;
                assert_eq!(c.bits_sent, c.beats * w);
                assert_eq!(c.bits_received, c.bits_sent * u.receivers as u64, "{}", p.label());
                assert!(c.toggles <= c.bits_sent);
                let lp = &plan.links[u.link];
                assert_eq!(u.receivers == 0, lp.dst == [Endpoint::Host]);
                assert!(u.receivers <= lp.dst.len());
            }
        }
        if mode != GridMode::Reload {
            let config: u64 = run
                .trace
                .phases
                .iter()
                .filter(|p| p.category == Category::Config)
                .flat_map(|p| &p.links)
                .map(|u| u.counters.bits_sent)
                .sum();
            let bytes: usize = plan.dies.iter().map(|d| d.footprint_bytes).sum();
            assert_eq!(config, 8 * bytes as u64);
        }
    }
}

#[test]
fn reload_traffic_matches_schedule() {
    for (inputs, hidden) in [(7, 11), (5, 8), (9, 3)] {
        let spec = NetworkSpec::uniform(3, inputs, hidden, None);
        let run = check(&spec, &small(), GridMode::Reload, 6, 3);
        let sched = reload_schedule(&spec, &small()).unwrap();
        for step in 0..3 {
            for pass in &sched {
                let bytes = |kind: PhaseKind| -> u64 {
                    run.trace
                        .phases_of(kind)
                        .filter(|p| p.step == Some(step) && p.layer == Some(pass.layer))
                        .flat_map(|p| &p.links)
                        .map(|u| u.counters.bits_sent / 8)
                        .sum()
                };
                assert_eq!(bytes(PhaseKind::ParamLoad), pass.param_bytes as u64);
                assert_eq!(bytes(PhaseKind::FeatureLoad), pass.feature_bytes as u64);
                let load = if step == 0 { 0 } else { pass.state_load_bytes as u64 };
                assert_eq!(bytes(PhaseKind::StateLoad), load);
                assert_eq!(bytes(PhaseKind::StateStore), pass.state_store_bytes as u64);
            }
        }
    }
}

type Stripped = (PhaseKind, Category, Option<usize>, u64, Vec<Activity>, Vec<(usize, u64, u64, u64, usize)>);

fn strip(p: &PhaseRecord) -> Stripped {
    let mut links: Vec<_> = p
        .links
        .iter()
        .map(|u| (u.link, u.counters.beats, u.counters.bits_sent, u.counters.bits_received, u.receivers))
        .collect();
    links.sort_unstable();
    (p.kind, p.category, p.layer, p.cycles(), p.activity.clone(), links)
}

fn analytic_agrees(spec: &NetworkSpec, tile: &TileSpec, mode: GridMode) {
    let run = check(spec, tile, mode, 3, 2);
    let plan = plan_grid(spec, tile, mode).unwrap();
    let model = analytic::schedule(&plan, CycleModel::default(), 1, true);
    let sim: Vec<_> = run.trace.phases.iter().filter(|p| p.category == Category::Config || p.step == Some(1)).collect();
    assert_eq!(sim.len(), model.len(), "{mode:?} {:?}", plan.grid_dims());
    for (a, b) in sim.iter().zip(&model) {
        assert_eq!(strip(a), strip(b), "{mode:?} {:?} {}", plan.grid_dims(), a.label());
    }

    let mut one = PhaseTrace::new(plan.total_dies);
    one.steps = 1;
    one.phases = sim.into_iter().cloned().collect();
    let mut est = PhaseTrace::new(plan.total_dies);
    est.steps = 1;
    est.phases = model;
    let (op, k) = (OperatingPoint::REFERENCE, EnergyConstants::default());
    for w in [Window::Layers, Window::WithOutput] {
        let measured = report(&one, &op, &k, ToggleSource::Measured, w);
        let alpha = report(&est, &op, &k, ToggleSource::Alpha, w);
        assert_eq!(measured.cycles_per_inference, alpha.cycles_per_inference);
        let rel = (measured.total_energy_j / alpha.total_energy_j - 1.0).abs();
        assert!(rel < 0.02, "{mode:?} {:?} energy differs by {rel}", plan.grid_dims());
    }
}

#[test]
fn analytic_schedule_matches_small_grids() {
    for mode in MODES {
        for (l, nh, fc) in [(1, 3, None), (1, 11, Some(5)), (2, 8, None), (3, 12, Some(2)), (2, 4, Some(3))] {
            analytic_agrees(&NetworkSpec::uniform(l, 7, nh, fc), &small(), mode);
        }
        analytic_agrees(&spec_of(6, &[12, 5], Some(3)), &small(), mode);
    }
}

#[test]
fn analytic_schedule_matches_full_size_grids() {
    let tile = TileSpec::default();
    for row in &TABLE4 {
        analytic_agrees(&row.spec(), &tile, GridMode::Stacked);
    }
    analytic_agrees(&NetworkSpec::uniform(1, 123, 192, Some(62)), &tile, GridMode::Stacked);
    analytic_agrees(&NetworkSpec::uniform(2, 96, 192, None), &tile, GridMode::Reload);
}
