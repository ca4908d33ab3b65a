// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

use crate::config::{resolve, Resolved};
use crate::table::{grouped, Table};
use crate::{Exit, Format, GlobalArgs, NetArgs};
use anyhow::{anyhow, Context};
use clap::ValueEnum;
use serde::Serialize;
use slstm::actlut::{uniform_grid, ActKind, Lut256};
use slstm::lstm_ref::{
    infer_fixed, infer_float, quantize_features, quantize_params_uniform, read_features, read_network, Features, FormatSet,
    LoadedNetwork, NetworkSpec, QuantNetwork,
};
use slstm::mapper::{pin_budget, plan_grid, GridMode, GridPlan, MapError, PinBudget};
use slstm::perf::{
    compare_table4, extrapolate, peak_performance, report, EnergyReport, OperatingPoint, ToggleSource, Window,
};
use slstm::qformat::QFormat;
use slstm::sim::{simulate, SimConfig};
use std::path::Path;

/// Writes to stdout, ignoring a closed pipe.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn mode_name(m: GridMode) -> &'static str {
    match m {
        GridMode::Stacked => "stacked",
        GridMode::Reload => "reload",
        GridMode::ChipSelect => "chip-select",
    }
}

fn map_error(e: MapError) -> Exit {
    match e {
        MapError::Capacity { layer, row, col, bytes, capacity } => Exit::constraint(anyhow!(
            "memory capacity exceeded: die (layer {layer}, row {row}, col {col}) needs {} bytes, capacity is {} bytes",
            grouped(bytes),
            grouped(capacity)
        )),
        other => Exit::usage(other),
    }
}

fn map(spec: &NetworkSpec, r: &Resolved) -> Result<GridPlan, Exit> {
    plan_grid(spec, &r.tile, r.mode).map_err(map_error)
}

fn pins(plan: &GridPlan, r: &Resolved, g: &GlobalArgs) -> Result<PinBudget, Exit> {
    let p = pin_budget(plan, r.input_count, g.time_multiplexed);
    match r.max_pins {
        Some(max) if p.total_min > max => Err(Exit::constraint(anyhow!(
            "pin budget exceeded: the plan needs {} pins per package, the limit is {max}",
            p.total_min
        ))),
        _ => Ok(p),
    }
}

fn write_out(dir: &Path, name: &str, content: &[u8]) -> Result<(), Exit> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Exit::usage)?;
    let path = dir.join(name);
    std::fs::write(&path, content).with_context(|| format!("writing {}", path.display())).map_err(Exit::usage)
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("report types serialize");
    s.push(b'\n');
    s
}

fn range(r: &std::ops::Range<usize>) -> String {
    format!("{}..{}", r.start, r.end)
}

fn die_table(plan: &GridPlan) -> Table {
    let mut t = Table::new(&[
        "die", "physical", "layer", "row", "col", "role", "hidden_rows", "x_cols", "h_cols", "fc_rows", "footprint [bytes]",
    ]);
    for d in &plan.dies {
        t.push(vec![
            d.id.to_string(),
            d.physical.to_string(),
            d.layer.to_string(),
            d.row.to_string(),
            d.col.to_string(),
            format!("{:?}", d.role).to_lowercase(),
            range(&d.hidden_rows),
            range(&d.x_cols),
            range(&d.h_cols),
            d.fc_rows.as_ref().map_or(String::new(), range),
            d.footprint_bytes.to_string(),
        ]);
    }
    t
}

fn plan_summary(plan: &GridPlan, p: &PinBudget, time_multiplexed: bool) -> String {
    let mut s = format!("grid: {} ({})\n", plan.summary(), mode_name(plan.mode));
    for l in &plan.layers {
        s += &format!(
            "layer {}: {}x{}, {} inputs (tile {}, pad {}), {} hidden (tile {}, pad {})\n",
            l.layer, l.n, l.n, l.n_in, l.ni_tile, l.ni_pad, l.n_hidden, l.nh_tile, l.nh_pad
        );
    }
    if let Some(fc) = &plan.fc {
        s += &format!("output layer: {} outputs (tile {}, pad {})\n", fc.n_out, fc.no_tile, fc.no_pad);
    }
    s += &format!(
        "footprint: max {} of {} bytes per die\n",
        grouped(plan.max_footprint()),
        grouped(plan.tile.sram_bytes)
    );
    if time_multiplexed {
        s += &format!("pins: {} (time-multiplexed)\n", p.total_min);
    } else {
        s += &format!("pins: {} ({} time-multiplexed)\n", p.total_min, p.total_time_multiplexed);
    }
    s
}

pub fn plan(g: &GlobalArgs, net: &NetArgs) -> Result<(), Exit> {
    let r = resolve(g, net)?;
    let plan = map(&r.spec, &r)?;
    let p = pins(&plan, &r, g)?;
    let dies = die_table(&plan);
    match g.format {
        Format::Txt => out!("{}\n{}", plan_summary(&plan, &p, g.time_multiplexed), dies.render(Format::Txt)),
        Format::Csv => out!("{}", dies.render(Format::Csv)),
    }
    if let Some(dir) = &r.out {
        write_out(dir, "plan.json", &json(&plan))?;
        write_out(dir, "pins.json", &json(&p))?;
        write_out(dir, "dies.csv", dies.render(Format::Csv).as_bytes())?;
    }
    Ok(())
}

/// The network to simulate and the spec it was planned from.
fn load_network(r: &Resolved) -> Result<(QuantNetwork, NetworkSpec), Exit> {
    let Some(path) = &r.params else {
        let net = QuantNetwork::new(r.spec.random_codes(r.seed), r.spec.formats).map_err(Exit::usage)?;
        return Ok((net, r.spec.clone()));
    };
    let net = match read_network(path).map_err(Exit::usage)? {
        LoadedNetwork::Quant(q) => q,
        LoadedNetwork::Float(f) => {
            let codes = quantize_params_uniform(&f, &r.spec.formats).map_err(Exit::usage)?;
            QuantNetwork::new(codes, r.spec.formats).map_err(Exit::usage)?
        }
    };
    let p = &net.params;
    let spec = NetworkSpec {
        layers: p.shape(),
        outputs: p.fc.as_ref().map(|fc| fc.n_out()),
        peephole: r.spec.peephole || p.layers.iter().any(|l| !l.is_vanilla()),
        formats: net.formats,
    };
    if r.explicit_network {
        r.spec
            .check_params(p)
            .with_context(|| format!("{} does not match the configured network", path.display()))
            .map_err(Exit::usage)?;
    }
    Ok((net, spec))
}

fn load_features(r: &Resolved, spec: &NetworkSpec) -> Result<Vec<Vec<i8>>, Exit> {
    let Some(path) = &r.features else {
        return Ok(spec.random_feature_codes(r.seed, r.steps));
    };
    let rows = match read_features(path).map_err(Exit::usage)? {
        Features::Float(rows) => quantize_features(&rows, spec.formats.state),
        Features::Quant { rows, format } if format == spec.formats.state => rows,
        Features::Quant { format, .. } => {
            return Err(Exit::usage(anyhow!(
                "{}: features are Q{}.{}, the network state format is Q{}.{}",
                path.display(),
                7 - format.frac_bits(),
                format.frac_bits(),
                7 - spec.formats.state.frac_bits(),
                spec.formats.state.frac_bits()
            )))
        }
    };
    if let Some((t, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != spec.n_inputs()) {
        return Err(Exit::usage(anyhow!(
            "{}: step {t} has {} features, the network expects {}",
            path.display(),
            row.len(),
            spec.n_inputs()
        )));
    }
    Ok(rows)
}

fn report_table(rep: &EnergyReport) -> Table {
    let mut t = Table::new(&["quantity", "value"]);
    let mut add = |k: &str, v: String| t.push(vec![k.to_string(), v]);
    add("dies", rep.dies.to_string());
    add("steps", rep.steps.to_string());
    add("cycles per step", format!("{:.1}", rep.cycles_per_inference));
    add("time per step [µs]", format!("{:.2}", rep.time_per_inference_s * 1e6));
    add("core power [mW]", format!("{:.3}", rep.core_power_w * 1e3));
    add("io power [mW]", format!("{:.3}", rep.io_power_w * 1e3));
    add("total power [mW]", format!("{:.3}", rep.total_power_w * 1e3));
    add("core energy per step [µJ]", format!("{:.4}", rep.core_energy_j * 1e6));
    add("io dynamic energy per step [µJ]", format!("{:.4}", rep.io_dynamic_j * 1e6));
    add("io static energy per step [µJ]", format!("{:.4}", rep.io_static_j * 1e6));
    add("total energy per step [µJ]", format!("{:.4}", rep.total_energy_j * 1e6));
    add("io share [%]", format!("{:.2}", rep.io_fraction));
    t
}

fn phase_table(rep: &EnergyReport) -> Table {
    let mut t = Table::new(&["phase", "cycles per step", "core energy [µJ]", "io energy [µJ]"]);
    for p in &rep.per_phase {
        t.push(vec![
            p.phase.clone(),
            format!("{:.1}", p.cycles as f64 / rep.steps.max(1) as f64),
            format!("{:.5}", p.core_j * 1e6),
            format!("{:.5}", p.io_j * 1e6),
        ]);
    }
    t
}

fn outputs_table(outputs: &[Vec<i8>], format: QFormat) -> Table {
    let mut t = Table::new(&["step", "unit", "code", "value"]);
    for (s, row) in outputs.iter().enumerate() {
        for (u, &c) in row.iter().enumerate() {
            t.push(vec![s.to_string(), u.to_string(), c.to_string(), (c as f64 * format.lsb()).to_string()]);
        }
    }
    t
}

#[derive(Serialize)]
struct RunReport<'a> {
    plan: String,
    mode: &'static str,
    seed: u64,
    bit_exact: bool,
    operating_point: &'a OperatingPoint,
    window: Window,
    toggles: ToggleSource,
    config_cycles: u64,
    report: &'a EnergyReport,
}

pub fn run(g: &GlobalArgs, net: &NetArgs, inject_fault: bool) -> Result<(), Exit> {
    let r = resolve(g, net)?;
    let (qnet, spec) = load_network(&r)?;
    let xs = load_features(&r, &spec)?;
    let plan = map(&spec, &r)?;
    pins(&plan, &r, g)?;
    let cfg = SimConfig { cycles: r.cal.cycles, ..SimConfig::default() };
    let mut sim = simulate(&plan, &qnet, &xs, &cfg).map_err(Exit::usage)?;
    if let Some(c) = sim.outputs.first_mut().and_then(|row| row.first_mut()).filter(|_| inject_fault) {
        *c = c.wrapping_add(1);
    }
    let gold = infer_fixed(&qnet, &xs, &plan.grid_dims()).map_err(Exit::usage)?;
    let bit_exact = sim.outputs == gold;

    let window = Window::WithOutput;
    let rep = report(&sim.trace, &r.op, &r.consts, ToggleSource::Measured, window);
    let summary = report_table(&rep);
    out!("grid: {} ({})\n", plan.summary(), mode_name(plan.mode));
    out!("BIT-EXACT: {}\n", if bit_exact { "yes" } else { "no" });
    out!("{}", summary.render(g.format));

    if let Some(dir) = &r.out {
        let out_format = if spec.outputs.is_some() { spec.formats.gate } else { spec.formats.state };
        let config_cycles = sim.trace.cycles_in(&[slstm::sim::Category::Config]);
        write_out(dir, "outputs.csv", outputs_table(&sim.outputs, out_format).render(Format::Csv).as_bytes())?;
        let mut trace = Vec::new();
        sim.trace.write_csv(&mut trace).map_err(Exit::usage)?;
        write_out(dir, "trace.csv", &trace)?;
        write_out(dir, "phases.csv", phase_table(&rep).render(Format::Csv).as_bytes())?;
        write_out(dir, "report.txt", summary.render(Format::Txt).as_bytes())?;
        let full = RunReport {
            plan: plan.summary(),
            mode: mode_name(plan.mode),
            seed: r.seed,
            bit_exact,
            operating_point: &r.op,
            window,
            toggles: ToggleSource::Measured,
            config_cycles,
            report: &rep,
        };
        write_out(dir, "report.json", &json(&full))?;
    }

    if !bit_exact {
        let (t, _) = sim.outputs.iter().zip(&gold).enumerate().find(|(_, (a, b))| a != b).unwrap_or((0, (&vec![], &vec![])));
        return Err(Exit::mismatch(anyhow!("simulated outputs differ from the reference model at step {t}")));
    }
    Ok(())
}

fn delta_pct(model: f64, published: f64) -> String {
    if published == 0.0 {
        String::new()
    } else {
        format!("{:+.1}", 100.0 * (model / published - 1.0))
    }
}

pub fn table4(g: &GlobalArgs) -> Result<(), Exit> {
    let r = resolve(g, &NetArgs::default())?;
    let mut t = Table::new(&[
        "row",
        "chips model",
        "chips published",
        "time model [µs]",
        "time published [µs]",
        "time delta [%]",
        "core power model [mW]",
        "core power published [mW]",
        "core power delta [%]",
        "core energy model [µJ]",
        "core energy published [µJ]",
        "core energy delta [%]",
        "io energy model [µJ]",
        "io energy published [µJ]",
        "io energy delta [%]",
        "total energy model [µJ]",
        "total energy published [µJ]",
        "total energy delta [%]",
        "io share model [%]",
        "io share published [%]",
        "io share delta [points]",
    ]);
    for c in compare_table4(&r.op, &r.consts, &r.cal) {
        let p = &c.row;
        let mut row = vec![p.label(), c.chips.to_string(), p.chips.to_string()];
        for (m, q, d) in [
            (c.time_us(), p.time_us, 1),
            (c.core_mw(), p.core_mw, 2),
            (c.core_uj(), p.core_uj, 3),
            (c.io_uj(), p.io_uj, 3),
            (c.total_uj(), p.total_uj, 3),
        ] {
            row.extend([format!("{m:.d$}"), format!("{q:.1}"), delta_pct(m, q)]);
        }
        row.extend([format!("{:.1}", c.io_pct()), format!("{:.1}", p.io_pct), format!("{:+.1}", c.io_pct() - p.io_pct)]);
        t.push(row);
    }
    let text = t.render(g.format);
    out!("{text}");
    if let Some(dir) = &r.out {
        write_out(dir, "table4.csv", t.render(Format::Csv).as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Grid size `n` of an `n·capacity`-unit network.
    Grid,
    /// Core clock in Hz.
    Frequency,
    /// Fractional bits of the state, weight and bias formats.
    FracBits,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Grid => "grid",
            Axis::Frequency => "frequency [Hz]",
            Axis::FracBits => "frac bits",
        }
    }

    fn defaults(self) -> &'static str {
        match self {
            Axis::Grid => "1,2,3,4,5",
            Axis::Frequency => "3.8e6,10e6,159e6",
            Axis::FracBits => "3,4,5,6",
        }
    }
}

const SWEEP_HEADER: [&str; 15] = [
    "point",
    "axis value",
    "dies",
    "cycles per step",
    "time per step [µs]",
    "peak [GOP/s]",
    "core power [mW]",
    "io power [mW]",
    "total power [mW]",
    "core energy [µJ]",
    "io energy [µJ]",
    "total energy [µJ]",
    "io share [%]",
    "rms error vs float",
    "bit exact",
];

struct Point {
    value: String,
    report: EnergyReport,
    peak_gops: f64,
    rms: Option<f64>,
    bit_exact: Option<bool>,
}

fn sweep_point(r: &Resolved, axis: Axis, raw: &str) -> Result<Point, Exit> {
    let bad = |e: &dyn std::fmt::Display| Exit::usage(anyhow!("{} value {raw:?}: {e}", axis.name()));
    match axis {
        Axis::Grid => {
            let n: usize = raw.parse().map_err(|e| bad(&e))?;
            if n == 0 {
                return Err(bad(&"grid size must be positive"));
            }
            let units = n * r.tile.nh_capacity;
            let spec = NetworkSpec { formats: r.spec.formats, ..NetworkSpec::uniform(r.spec.layers.len(), units, units, None) };
            let rep = extrapolate(&spec, &r.tile, r.mode, &r.op, &r.consts, &r.cal).map_err(|e| with_value(map_error(e), raw))?;
            let peak = peak_performance(n * n * r.tile.nh_capacity, &r.op);
            Ok(Point { value: n.to_string(), report: rep, peak_gops: peak, rms: None, bit_exact: None })
        }
        Axis::Frequency => {
            let f: f64 = raw.parse().map_err(|e| bad(&e))?;
            if !(f.is_finite() && f > 0.0) {
                return Err(bad(&"frequency must be positive"));
            }
            let op = OperatingPoint { frequency_hz: f, ..r.op };
            let rep = extrapolate(&r.spec, &r.tile, r.mode, &op, &r.consts, &r.cal).map_err(|e| with_value(map_error(e), raw))?;
            let units: usize = match plan_grid(&r.spec, &r.tile, r.mode) {
                Ok(p) => p.layers.first().map_or(0, |l| l.n * l.n) * r.tile.nh_capacity,
                Err(e) => return Err(with_value(map_error(e), raw)),
            };
            Ok(Point { value: raw.to_string(), report: rep, peak_gops: peak_performance(units, &op), rms: None, bit_exact: None })
        }
        Axis::FracBits => {
            let b: u8 = raw.parse().map_err(|e| bad(&e))?;
            let q = QFormat::new(b).map_err(|e| bad(&e))?;
            let formats = FormatSet { state: q, weight: q, bias: q, ..r.spec.formats };
            formats.validate().map_err(|e| bad(&e))?;
            let spec = NetworkSpec { formats, ..r.spec.clone() };
            let float = spec.random_float_params(r.seed, 0.5);
            let xf: Vec<Vec<f64>> = spec
                .random_feature_codes(r.seed, r.steps)
                .iter()
                .map(|row| row.iter().map(|&c| c as f64 / 128.0).collect())
                .collect();
            let net = QuantNetwork::new(quantize_params_uniform(&float, &formats).map_err(|e| bad(&e))?, formats)
                .map_err(|e| bad(&e))?;
            let xs = quantize_features(&xf, q);
            let plan = plan_grid(&spec, &r.tile, r.mode).map_err(|e| with_value(map_error(e), raw))?;
            let cfg = SimConfig { cycles: r.cal.cycles, ..SimConfig::default() };
            let sim = simulate(&plan, &net, &xs, &cfg).map_err(|e| bad(&e))?;
            let gold = infer_fixed(&net, &xs, &plan.grid_dims()).map_err(|e| bad(&e))?;
            let reference = infer_float(&float, &xf).map_err(|e| bad(&e))?;
            let lsb = if spec.outputs.is_some() { formats.gate.lsb() } else { q.lsb() };
            let (mut se, mut n) = (0.0, 0usize);
            for (a, b) in sim.outputs.iter().flatten().zip(reference.iter().flatten()) {
                se += (*a as f64 * lsb - b).powi(2);
                n += 1;
            }
            let rms = if n > 0 { (se / n as f64).sqrt() } else { 0.0 };
            let rep = report(&sim.trace, &r.op, &r.consts, ToggleSource::Measured, Window::Layers);
            let units = plan.layers.first().map_or(0, |l| l.n * l.n) * r.tile.nh_capacity;
            Ok(Point {
                value: b.to_string(),
                report: rep,
                peak_gops: peak_performance(units, &r.op),
                rms: Some(rms),
                bit_exact: Some(sim.outputs == gold),
            })
        }
    }
}

fn with_value(mut e: Exit, raw: &str) -> Exit {
    e.error = e.error.context(format!("sweep point {raw}"));
    e
}

pub fn sweep(g: &GlobalArgs, net: &NetArgs, axis: Axis, values: Option<&str>) -> Result<(), Exit> {
    let r = resolve(g, net)?;
    let raw: Vec<&str> =
        values.unwrap_or(axis.defaults()).split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let results: Vec<Result<Point, Exit>> = std::thread::scope(|s| {
        let handles: Vec<_> = raw.iter().map(|v| s.spawn(|| sweep_point(&r, axis, v))).collect();
        handles.into_iter().map(|h| h.join().expect("sweep point panicked")).collect()
    });
    let mut points = Vec::with_capacity(results.len());
    for p in results {
        points.push(p?);
    }
    let mut header = SWEEP_HEADER;
    header[1] = axis.name();
    let mut t = Table::new(&header);
    for (i, p) in points.iter().enumerate() {
        let rep = &p.report;
        t.push(vec![
            i.to_string(),
            p.value.clone(),
            rep.dies.to_string(),
            format!("{:.1}", rep.cycles_per_inference),
            format!("{:.2}", rep.time_per_inference_s * 1e6),
            format!("{:.2}", p.peak_gops),
            format!("{:.3}", rep.core_power_w * 1e3),
            format!("{:.3}", rep.io_power_w * 1e3),
            format!("{:.3}", rep.total_power_w * 1e3),
            format!("{:.4}", rep.core_energy_j * 1e6),
            format!("{:.4}", rep.io_energy_j * 1e6),
            format!("{:.4}", rep.total_energy_j * 1e6),
            format!("{:.2}", rep.io_fraction),
            p.rms.map_or(String::new(), |v| format!("{v:.5}")),
            p.bit_exact.map_or(String::new(), |v| if v { "yes".into() } else { "no".into() }),
        ]);
    }
    out!("{}", t.render(g.format));
    if let Some(dir) = &r.out {
        write_out(dir, "sweep.csv", t.render(Format::Csv).as_bytes())?;
    }
    if let Some(p) = points.iter().find(|p| p.bit_exact == Some(false)) {
        return Err(Exit::mismatch(anyhow!("frac bits {}: simulated outputs differ from the reference model", p.value)));
    }
    Ok(())
}

pub fn lut_dump(g: &GlobalArgs) -> Result<(), Exit> {
    let r = resolve(g, &NetArgs::default())?;
    let f = r.spec.formats;
    let sig = Lut256::build(ActKind::Sigmoid, f.state, f.gate);
    let tanh = Lut256::build(ActKind::Tanh, f.state, f.gate);
    let mut t = Table::new(&["index", "input code", "input value", "sigmoid code", "sigmoid value", "tanh code", "tanh value"]);
    for idx in 0..256usize {
        let code = idx as u8 as i8;
        let (s, h) = (sig.lookup(code), tanh.lookup(code));
        t.push(vec![
            idx.to_string(),
            code.to_string(),
            (code as f64 * f.state.lsb()).to_string(),
            s.to_string(),
            (s as f64 * f.gate.lsb()).to_string(),
            h.to_string(),
            (h as f64 * f.gate.lsb()).to_string(),
        ]);
    }
    let grid = uniform_grid(f.state.min_value(), f.state.max_value() + f.state.lsb(), 200_000);
    let mut stats = Table::new(&["function", "mse", "max squared error", "mean error", "squared error std"]);
    for (name, lut) in [("sigmoid", &sig), ("tanh", &tanh)] {
        let e = lut.error_stats(&grid).map_err(Exit::usage)?;
        stats.push(vec![name.into(), format!("{:.3e}", e.mse), format!("{:.3e}", e.max_se), format!("{:.3e}", e.mean), format!("{:.3e}", e.std)]);
    }
    match g.format {
        Format::Csv => out!("{}", t.render(Format::Csv)),
        Format::Txt => out!("{}\n{}", t.render(Format::Txt), stats.render(Format::Txt)),
    }
    if let Some(dir) = &r.out {
        for (name, lut) in [("sigmoid.csv", &sig), ("tanh.csv", &tanh)] {
            let mut buf = Vec::new();
            lut.write_csv(&mut buf).map_err(Exit::usage)?;
            write_out(dir, name, &buf)?;
        }
        write_out(dir, "lut_error.csv", stats.render(Format::Csv).as_bytes())?;
    }
    Ok(())
}
