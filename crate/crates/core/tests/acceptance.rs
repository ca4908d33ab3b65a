// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion, with the
//! per-row detail indented underneath, and fails if any criterion fails.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slstm::actlut::{uniform_grid, ActKind, ActLuts, Lut256};
use slstm::lstm_ref::*;
use slstm::mapper::*;
use slstm::perf::*;
use slstm::qformat::{dequantize, mac, quantize, requantize, Acc16, QFormat, Q8};
use slstm::sim::*;
use std::time::Instant;

struct Suite {
    failed: Vec<String>,
}

impl Suite {
    fn record(&mut self, id: &str, ok: bool, what: String) {
        println!("{} {id:>2} {what}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(id.to_string());
        }
    }
}

fn detail(s: String) {
    println!("        {s}");
}

fn bit_exact(s: &mut Suite) {
    let t0 = Instant::now();
    let tile = TileSpec { nh_capacity: 8, ..TileSpec::default() };
    let mut runs = 0;
    let mut bad = Vec::new();
    for n in 1..=3usize {
        for layers in 1..=2usize {
            for mode in [GridMode::Stacked, GridMode::Reload, GridMode::ChipSelect] {
                for k in 0..100u64 {
                    let seed = (n as u64) << 32 | (layers as u64) << 24 | (mode as u64) << 16 | k;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let hidden = rng.gen_range(8 * (n - 1) + 1..=8 * n);
                    let inputs = rng.gen_range(1..=16);
                    let outputs = rng.gen_bool(0.5).then(|| rng.gen_range(1..=10));
                    let mut spec = NetworkSpec::uniform(layers, inputs, hidden, outputs);
                    spec.peephole = rng.gen_bool(0.8);
                    let net = QuantNetwork::new(spec.random_codes(seed), spec.formats).unwrap();
                    let xs = spec.random_feature_codes(seed, rng.gen_range(2..=4));
                    let plan = plan_grid(&spec, &tile, mode).unwrap();
                    assert!(plan.layers.iter().all(|l| l.n == n && l.nh_tile <= 8));
                    let got = simulate(&plan, &net, &xs, &SimConfig::default()).unwrap().outputs;
                    if got != infer_fixed(&net, &xs, &plan.grid_dims()).unwrap() {
                        bad.push(format!("{n}x{n} L{layers} {mode:?} seed {seed}"));
                    }
                    runs += 1;
                }
            }
        }
    }
    let spec = NetworkSpec::uniform(1, 192, 192, None);
    let net = QuantNetwork::new(spec.random_codes(7), spec.formats).unwrap();
    let xs = spec.random_feature_codes(7, 3);
    let plan = plan_grid(&spec, &TileSpec::default(), GridMode::Stacked).unwrap();
    let full = simulate(&plan, &net, &xs, &SimConfig::default()).unwrap().outputs;
    if full != infer_fixed(&net, &xs, &plan.grid_dims()).unwrap() {
        bad.push("full 2x2 / 192".into());
    }
    runs += 1;
    let secs = t0.elapsed().as_secs_f64();
    for b in &bad {
        detail(format!("mismatch: {b}"));
    }
    s.record(
        "1",
        bad.is_empty() && secs < 60.0,
        format!("bit-exact distribution: {runs} networks over 18 shape classes plus full 2x2/192, {} mismatches, {secs:.1} s", bad.len()),
    );
}

fn peak(s: &mut Suite) {
    let a = peak_performance(96, &OperatingPoint::at_frequency(159e6));
    let b = peak_performance(96, &OperatingPoint::at_frequency(3.8e6));
    let ok = (a - 30.528).abs() < 1e-9 && (b - 0.7296).abs() < 1e-9 && format!("{a:.2}") == "30.53" && format!("{b:.2}") == "0.73";
    s.record("2", ok, format!("peak performance: {a:.3} GOP/s at 159 MHz, {b:.4} GOP/s at 3.8 MHz"));
}

fn bandwidth(s: &mut Suite) {
    let bw = link_bandwidth(&OperatingPoint::at_frequency(159e6), TileSpec::default().link_data_bits);
    s.record("3", bw == 79.5e6, format!("link bandwidth: {:.1} MB/s at 159 MHz", bw / 1e6));
}

fn pins(s: &mut Suite) {
    let mut specs: Vec<NetworkSpec> = TABLE4.iter().map(|r| r.spec()).collect();
    specs.push(demonstrator_spec());
    let mut ok = true;
    for spec in &specs {
        for mode in [GridMode::Stacked, GridMode::Reload, GridMode::ChipSelect] {
            let plan = plan_grid(spec, &TileSpec::default(), mode).unwrap();
            for count in [InputCount::Columns, InputCount::AllDies] {
                ok &= pin_budget(&plan, count, true).total_min == 17;
            }
        }
    }
    s.record("4", ok, format!("time-multiplexed pin budget is 17 for all {} plans", specs.len() * 3));
}

fn chips(s: &mut Suite) {
    let mut ok = true;
    for r in &TABLE4 {
        let plan = plan_grid(&r.spec(), &TileSpec::default(), GridMode::Stacked).unwrap();
        let per_layer = plan.layers.iter().all(|l| l.n * l.n == r.grid * r.grid);
        let row_ok = per_layer && plan.total_dies == r.chips;
        ok &= row_ok;
        detail(format!("{:16} per layer {} total {} (published {})", r.label(), r.grid * r.grid, plan.total_dies, r.chips));
    }
    s.record("5", ok, "grid sizing: chips per layer and total for all ten rows".into());
}

fn latency(s: &mut Suite, rows: &[Table4Comparison], secs: f64) {
    for fit in [fit_calibration(LoopMode::FixedCapacity), fit_calibration(LoopMode::Truncate)] {
        let c = fit.calibration.cycles;
        detail(format!(
            "fit {:?}: c_gate {} c_fixed {} stall {:.2} (raw {:.2}), worst single-layer error {:.2}%",
            c.loop_mode,
            c.c_gate,
            c.c_fixed,
            fit.calibration.stall_fraction,
            fit.raw_stall_fraction,
            100.0 * fit.max_time_error
        ));
    }
    let mut ok = secs < 5.0;
    for c in rows {
        let row_ok = within_printed(c.time_us(), c.row.time_us, 0.05, 1);
        ok &= row_ok;
        detail(format!(
            "{} {:16} {:8.1} us vs {:8.1} us ({:+.1}%)",
            if row_ok { "ok " } else { "OUT" },
            c.row.label(),
            c.time_us(),
            c.row.time_us,
            100.0 * c.time_error()
        ));
    }
    s.record("6", ok, format!("latency within 5% on all ten rows (model evaluated in {secs:.2} s)"));
}

fn core(s: &mut Suite, rows: &[Table4Comparison]) {
    let mut ok = true;
    for c in rows {
        let p = within_printed(c.core_mw(), c.row.core_mw, 0.05, 1);
        let e = within_printed(c.core_uj(), c.row.core_uj, 0.10, 1);
        ok &= p && e;
        detail(format!(
            "{} {:16} {:7.2} mW vs {:6.1} | {:7.2} uJ vs {:6.1}",
            if p && e { "ok " } else { "OUT" },
            c.row.label(),
            c.core_mw(),
            c.row.core_mw,
            c.core_uj(),
            c.row.core_uj
        ));
    }
    s.record("7", ok, "core power within 5% and core energy within 10% on all ten rows".into());
}

fn io(s: &mut Suite, rows: &[Table4Comparison]) {
    let mut ok = true;
    for c in rows {
        let pct = (c.io_pct() - c.row.io_pct).abs() <= 4.0;
        let abs = within_factor_printed(c.io_uj(), c.row.io_uj, 2.0, 1);
        ok &= pct && abs;
        detail(format!(
            "{} {:16} {:5.1}% vs {:5.1}% | {:7.3} uJ vs {:5.1}",
            if pct && abs { "ok " } else { "OUT" },
            c.row.label(),
            c.io_pct(),
            c.row.io_pct,
            c.io_uj(),
            c.row.io_uj
        ));
    }
    let single: Vec<f64> = rows.iter().filter(|c| c.row.layers == 1 && c.row.grid >= 2).map(|c| c.io_pct()).collect();
    let monotone = single.windows(2).all(|w| w[1] < w[0]);
    detail(format!("single-layer 2x2..5x5 I/O share: {single:.1?}"));
    s.record("8", ok && monotone, "I/O share within 4 points, monotone 2x2 to 5x5, I/O energy within 2x".into());
}

fn demonstrator(s: &mut Suite) {
    let spec = demonstrator_spec();
    let net = QuantNetwork::new(spec.random_codes(2024), spec.formats).unwrap();
    let xs = spec.random_feature_codes(2024, 4);
    let plan = plan_grid(&spec, &TileSpec::default(), GridMode::Stacked).unwrap();
    let run = simulate(&plan, &net, &xs, &SimConfig::default()).unwrap();
    let r = report(&run.trace, &OperatingPoint::REFERENCE, &EnergyConstants::default(), ToggleSource::Measured, Window::WithOutput);
    let total = r.total_energy_j * 1e6;
    let core_pct = 100.0 - r.io_fraction;
    detail(format!(
        "{:.1} us per step, core {:.3} uJ, I/O {:.3} uJ, {:.2} mW total",
        r.time_per_inference_s * 1e6,
        r.core_energy_j * 1e6,
        r.io_energy_j * 1e6,
        r.total_power_w * 1e3
    ));
    let ok = (total / 2.97 - 1.0).abs() <= 0.15 && (core_pct - 88.0).abs() <= 4.0;
    s.record("9", ok, format!("demonstrator: {total:.3} uJ vs 2.97 uJ, split {core_pct:.1}/{:.1} vs 88/12", r.io_fraction));
}

fn luts(s: &mut Suite) {
    let (fin, fout) = (QFormat::Q2_5, QFormat::Q0_7);
    let mut exact = true;
    for kind in [ActKind::Tanh, ActKind::Sigmoid] {
        let lut = Lut256::build(kind, fin, fout);
        for code in i8::MIN..=i8::MAX {
            let want = quantize(kind.eval(dequantize(Q8::new(code, fin))), fout).code;
            exact &= lut.lookup(code) == want;
        }
    }
    let l = ActLuts::new(fin, fout);
    let grid = uniform_grid(fin.min_value(), -fin.min_value(), 200_000);
    let t = l.tanh.error_stats(&grid).unwrap();
    let g = l.sigmoid.error_stats(&grid).unwrap();
    detail(format!("tanh    mse {:.3e} max {:.3e} mean {:+.3e} std {:.3e}", t.mse, t.max_se, t.mean, t.std));
    detail(format!("sigmoid mse {:.3e} max {:.3e} mean {:+.3e} std {:.3e}", g.mse, g.max_se, g.mean, g.std));
    let ok = exact && t.max_se <= 4e-4 && g.max_se <= 2e-4;
    s.record("10", ok, format!("LUTs: 256-code scan exact, max squared error {:.2e} (tanh) {:.2e} (sigmoid)", t.max_se, g.max_se));
}

fn arithmetic(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cases = 100_000;
    let mut bad = 0;
    for _ in 0..cases {
        let (fa, fb) = (rng.gen_range(0..=7u8), rng.gen_range(0..=7u8));
        let acc: i16 = rng.gen();
        let (a, b): (i8, i8) = (rng.gen(), rng.gen());
        let got = mac(Acc16::new(acc, fa + fb), Q8::new(a, QFormat::new(fa).unwrap()), Q8::new(b, QFormat::new(fb).unwrap()));
        let wide = (acc as i128 + a as i128 * b as i128).clamp(i16::MIN as i128, i16::MAX as i128);
        bad += (got.value as i128 != wide) as u32;
        bad += (got.saturated != (wide != acc as i128 + a as i128 * b as i128)) as u32;

        let target = rng.gen_range(0..=fa + fb);
        let q = requantize(got, QFormat::new(target.min(7)).unwrap()).unwrap();
        let shift = (fa + fb - target.min(7)) as i32;
        let exact = got.value as f64 / (shift as f64).exp2();
        let want = exact.round().clamp(-128.0, 127.0) as i8;
        bad += (q.code != want) as u32;
    }
    let mut trip = true;
    for frac in 0..=7 {
        let f = QFormat::new(frac).unwrap();
        for code in i8::MIN..=i8::MAX {
            trip &= quantize(dequantize(Q8::new(code, f)), f).code == code;
        }
    }
    s.record("11", bad == 0 && trip, format!("fixed-point oracle: {cases} mac/requantize cases, {bad} mismatches; 8x256 round trip {}", if trip { "exact" } else { "broken" }));
}

#[test]
fn acceptance() {
    let mut s = Suite { failed: Vec::new() };
    bit_exact(&mut s);
    peak(&mut s);
    bandwidth(&mut s);
    pins(&mut s);
    chips(&mut s);
    let t0 = Instant::now();
    let rows = compare_table4(&OperatingPoint::REFERENCE, &EnergyConstants::default(), &Calibration::default());
    let secs = t0.elapsed().as_secs_f64();
    latency(&mut s, &rows, secs);
    core(&mut s, &rows);
    io(&mut s, &rows);
    demonstrator(&mut s);
    luts(&mut s);
    arithmetic(&mut s);
    println!("SKIP 12 phoneme error rates and silicon power at 1.275 V are not reproducible here");
    assert!(s.failed.is_empty(), "failed criteria: {}", s.failed.join(", "));
}
