// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;
use slstm::lstm_ref::NetworkSpec;
use slstm::mapper::*;
use std::collections::HashSet;

fn covered_once(plan: &GridPlan) -> Result<(), String> {
    for lp in &plan.layers {
        let dies = &plan.dies[lp.dies.clone()];
        let mut wx = vec![0u32; lp.n_hidden * lp.n_in];
        let mut wh = vec![0u32; lp.n_hidden * lp.n_hidden];
        let mut vecs = vec![0u32; lp.n_hidden];
        for d in dies {
            for r in d.hidden_rows.clone() {
                for c in d.x_cols.clone() {
                    wx[r * lp.n_in + c] += 1;
                }
                for c in d.h_cols.clone() {
                    wh[r * lp.n_hidden + c] += 1;
                }
                if d.role == Role::Master {
                    vecs[r] += 1;
                }
            }
        }
        if wx.iter().chain(&wh).chain(&vecs).any(|&k| k != 1) {
            return Err(format!("layer {} tiles overlap or leave gaps", lp.layer));
        }
    }
    if let Some(fc) = &plan.fc {
        let lp = plan.layers.last().unwrap();
        let mut w = vec![0u32; fc.n_out * lp.n_hidden];
        let mut b = vec![0u32; fc.n_out];
        for d in &plan.dies[lp.dies.clone()] {
            let rows = d.fc_rows.clone().ok_or("missing fc rows")?;
            for r in rows {
                for c in d.h_cols.clone() {
                    w[r * lp.n_hidden + c] += 1;
                }
                if d.role == Role::Master {
                    b[r] += 1;
                }
            }
        }
        if w.iter().chain(&b).any(|&k| k != 1) {
            return Err("output layer tiles overlap or leave gaps".into());
        }
    }
    Ok(())
}

fn structure(plan: &GridPlan) -> Result<(), String> {
    let ids: HashSet<usize> = plan.dies.iter().map(|d| d.id).collect();
    for l in &plan.links {
        for e in std::iter::once(&l.src).chain(&l.dst) {
            if let Endpoint::Die(d) = e {
                if !ids.contains(d) {
                    return Err(format!("link {} names unknown die {d}", l.id));
                }
            }
        }
    }
    for d in &plan.dies {
        let n = plan.links_of(LinkKind::Param).filter(|l| l.dst.contains(&Endpoint::Die(d.id))).count();
        if n != 1 {
            return Err(format!("die {} has {n} parameter links", d.id));
        }
        if d.footprint_bytes > plan.tile.sram_bytes || d.physical >= plan.total_dies {
            return Err(format!("die {} out of bounds", d.id));
        }
        let lp = &plan.layers[d.layer];
        if (d.col + 1 == lp.n) != (d.role == Role::Master) {
            return Err(format!("die {} has the wrong role", d.id));
        }
    }
    let physical: HashSet<usize> = plan.dies.iter().map(|d| d.physical).collect();
    if !plan.reload() && physical.len() != plan.dies.len() {
        return Err("stacked dies share a physical die".into());
    }
    Ok(())
}

#[test]
fn published_shapes_tile_completely() {
    for (l, nh) in [(1, 96), (1, 56), (1, 192), (1, 288), (1, 384), (1, 480), (2, 96), (2, 192), (3, 384), (3, 480)] {
        for mode in [GridMode::Stacked, GridMode::Reload, GridMode::ChipSelect] {
            let plan = plan_grid(&NetworkSpec::uniform(l, nh, nh, None), &TileSpec::default(), mode).unwrap();
            covered_once(&plan).unwrap();
            structure(&plan).unwrap();
        }
    }
    let demo = plan_grid(&NetworkSpec::uniform(1, 123, 192, Some(62)), &TileSpec::default(), GridMode::Stacked).unwrap();
    covered_once(&demo).unwrap();
    assert_eq!(demo.summary(), "2x2, 4 dies");
    assert_eq!(demo.layers[0].ni_pad, 1);
}

#[test]
fn over_capacity_is_rejected() {
    let spec = NetworkSpec::uniform(1, 200, 96, None);
    match plan_grid(&spec, &TileSpec::default(), GridMode::Stacked) {
        Err(MapError::Capacity { bytes, capacity, .. }) => {
            assert_eq!(capacity, 86_016);
            assert_eq!(bytes, memory_footprint(200, 96, true, true, None));
        }
        other => panic!("expected a capacity error, got {other:?}"),
    }
}

#[test]
fn pin_counts() {
    let plan = plan_grid(&NetworkSpec::uniform(1, 192, 192, None), &TileSpec::default(), GridMode::Stacked).unwrap();
    let p = pin_budget(&plan, InputCount::Columns, false);
    assert_eq!(p.total_min, 2 + 3 + 6 * 2 + 6 * 2);
    assert_eq!(p.total_time_multiplexed, 17);
    assert_eq!(pin_budget(&plan, InputCount::AllDies, false).total_min, 2 + 3 + 6 * 4 + 6 * 2);
    assert_eq!(pin_budget(&plan, InputCount::Columns, true).total_min, 17);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_shapes_tile_completely(
        hidden in prop::collection::vec(1usize..40, 1..4),
        inputs in 1usize..30,
        outputs in prop::option::of(1usize..20),
        cap in 3usize..12,
        mode in prop_oneof![Just(GridMode::Stacked), Just(GridMode::Reload), Just(GridMode::ChipSelect)],
    ) {
        let mut spec = NetworkSpec::uniform(hidden.len(), inputs, hidden[0], outputs);
        for (l, &h) in hidden.iter().enumerate() {
            spec.layers[l].hidden = h;
            if l > 0 {
                spec.layers[l].inputs = hidden[l - 1];
            }
        }
        let tile = TileSpec { nh_capacity: cap, ..TileSpec::default() };
        let plan = plan_grid(&spec, &tile, mode).unwrap();
        prop_assert_eq!(covered_once(&plan), Ok(()));
        prop_assert_eq!(structure(&plan), Ok(()));
        for lp in &plan.layers {
            prop_assert_eq!(lp.n, hidden[lp.layer].div_ceil(cap));
            prop_assert!(lp.nh_tile <= cap);
        }
    }
}
