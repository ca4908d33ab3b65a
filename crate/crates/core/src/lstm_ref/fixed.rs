// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

use super::{
    check_dim, FcParams, FormatSet, Gate, LayerParams, LstmError, LstmState, NetworkParams, QuantNetwork,
};
use crate::actlut::{ActLuts, Lut256};
use crate::qformat::{mac, quantize, requantize, Acc16, FormatError, QFormat, Q8};
use crate::tiling::tile_range;

fn check_luts(luts: &ActLuts, f: &FormatSet) -> Result<(), LstmError> {
    for lut in [&luts.sigmoid, &luts.tanh] {
        if lut.in_format != f.state {
            return Err(FormatError::Mismatch { expected: f.state, actual: lut.in_format }.into());
        }
        if lut.out_format != f.gate {
            return Err(FormatError::Mismatch { expected: f.gate, actual: lut.out_format }.into());
        }
    }
    Ok(())
}

/// Blocked dot product `w_x·x + w_h·h` for one output row: each block
/// accumulates its x tile then its h tile from zero, block results are
/// chained left to right with a saturating add.
fn blocked_dot(
    wx: &[i8],
    x: &[i8],
    wh: &[i8],
    h: &[i8],
    f: &FormatSet,
    blocks: usize,
) -> Acc16 {
    let acc = f.acc_frac();
    let mut total = Acc16::zero(acc);
    for b in 0..blocks {
        let mut part = Acc16::zero(acc);
        for k in tile_range(x.len(), blocks, b) {
            part = mac(part, Q8::new(wx[k], f.weight), Q8::new(x[k], f.state));
        }
        for k in tile_range(h.len(), blocks, b) {
            part = mac(part, Q8::new(wh[k], f.weight), Q8::new(h[k], f.state));
        }
        total = if b == 0 { part } else { total.saturating_add(part) };
    }
    total
}

fn activate(acc: Acc16, lut: &Lut256, f: &FormatSet) -> i8 {
    // requantize never fails here: acc_frac >= state frac by construction
    let q = requantize(acc, f.state).expect("accumulator finer than state");
    lut.lookup(q.code)
}

/// `c_t = f⊙c_{t-1} + i⊙c̃` and `h_t = o⊙tanh(c_t)` on codes.
pub fn cell_update(f_code: i8, c_prev: i8, i_code: i8, cand: i8, f: &FormatSet) -> i8 {
    let fc = Acc16::product(Q8::new(f_code, f.gate), Q8::new(c_prev, f.state));
    let ic = Acc16::product(Q8::new(i_code, f.gate), Q8::new(cand, f.gate));
    let common = fc.frac_bits.min(ic.frac_bits);
    let sum = fc.rescale(common).saturating_add(ic.rescale(common));
    requantize(sum, f.state).expect("cell sum finer than state").code
}

pub fn hidden_update(o_code: i8, tanh_c: i8, f: &FormatSet) -> i8 {
    let p = Acc16::product(Q8::new(o_code, f.gate), Q8::new(tanh_c, f.gate));
    requantize(p, f.state).expect("gate product finer than state").code
}

/// One fixed-point time step of a layer. `blocks` is the number of grid
/// columns the layer is split over (1 on a single die).
pub fn cell_step_fixed(
    p: &LayerParams<i8>,
    formats: &FormatSet,
    luts: &ActLuts,
    state: &LstmState<i8>,
    x: &[i8],
    blocks: usize,
) -> Result<LstmState<i8>, LstmError> {
    p.validate()?;
    formats.validate()?;
    check_luts(luts, formats)?;
    let nh = p.n_hidden();
    check_dim("input vector", p.n_in(), x.len())?;
    check_dim("h state", nh, state.h.len())?;
    check_dim("c state", nh, state.c.len())?;
    let blocks = blocks.max(1);

    let pre = |g: Gate, j: usize, c_peep: i8| -> Acc16 {
        let k = g.index();
        let mut acc = blocked_dot(p.w_x[k].row(j), x, p.w_h[k].row(j), &state.h, formats, blocks);
        if let Some(s) = g.peephole_slot() {
            acc = mac(acc, Q8::new(p.peephole[s][j], formats.weight), Q8::new(c_peep, formats.state));
        }
        acc.add_code(Q8::new(p.bias[k][j], formats.bias))
    };

    let mut h = vec![0i8; nh];
    let mut c = vec![0i8; nh];
    for j in 0..nh {
        let cp = state.c[j];
        let i = activate(pre(Gate::Input, j, cp), &luts.sigmoid, formats);
        let f = activate(pre(Gate::Forget, j, cp), &luts.sigmoid, formats);
        let cand = activate(pre(Gate::Cell, j, 0), &luts.tanh, formats);
        c[j] = cell_update(f, cp, i, cand, formats);
        let o = activate(pre(Gate::Output, j, c[j]), &luts.sigmoid, formats);
        h[j] = hidden_update(o, luts.tanh.lookup(c[j]), formats);
    }
    Ok(LstmState { h, c })
}

/// `σ(W h + b)` with the dot product split into `blocks` column blocks.
pub fn fc_step_fixed(
    p: &FcParams<i8>,
    formats: &FormatSet,
    luts: &ActLuts,
    h: &[i8],
    blocks: usize,
) -> Result<Vec<i8>, LstmError> {
    p.validate()?;
    check_luts(luts, formats)?;
    check_dim("fc input", p.n_in(), h.len())?;
    let blocks = blocks.max(1);
    Ok((0..p.n_out())
        .map(|r| {
            let acc = blocked_dot(&[], &[], p.w.row(r), h, formats, blocks)
                .add_code(Q8::new(p.b[r], formats.bias));
            activate(acc, &luts.sigmoid, formats)
        })
        .collect())
}

/// Fixed-point inference from zero state. `blocks[l]` is the column split
/// of layer `l`; the FC layer uses the split of the last layer.
pub fn infer_fixed(net: &QuantNetwork, features: &[Vec<i8>], blocks: &[usize]) -> Result<Vec<Vec<i8>>, LstmError> {
    let p = &net.params;
    p.validate()?;
    check_dim("block list", p.layers.len(), blocks.len())?;
    let luts = ActLuts::new(net.formats.state, net.formats.gate);
    let mut states: Vec<LstmState<i8>> = p.layers.iter().map(|l| LstmState::zeros(l.n_hidden())).collect();
    let mut out = Vec::with_capacity(features.len());
    for x in features {
        let mut v = x.clone();
        for ((layer, st), &b) in p.layers.iter().zip(states.iter_mut()).zip(blocks) {
            *st = cell_step_fixed(layer, &net.formats, &luts, st, &v, b)?;
            v = st.h.clone();
        }
        out.push(match &p.fc {
            Some(fc) => fc_step_fixed(fc, &net.formats, &luts, &v, *blocks.last().unwrap())?,
            None => v,
        });
    }
    Ok(out)
}

fn weight_code(v: f64, fmt: QFormat) -> i8 {
    quantize(v, fmt).code.max(-127)
}

/// Symmetric 255-level quantization: weights and peepholes onto the weight
/// grid, biases onto the bias grid, code -128 never produced.
pub fn quantize_params_uniform(p: &NetworkParams<f64>, formats: &FormatSet) -> Result<NetworkParams<i8>, LstmError> {
    p.validate()?;
    let (wf, bf) = (formats.weight, formats.bias);
    let layers = p
        .layers
        .iter()
        .map(|l| {
            let mut q = l.map(|v| weight_code(v, wf));
            for k in 0..4 {
                q.bias[k] = l.bias[k].iter().map(|&v| weight_code(v, bf)).collect();
            }
            q
        })
        .collect();
    let fc = p.fc.as_ref().map(|fc| FcParams {
        w: fc.w.map(|v| weight_code(v, wf)),
        b: fc.b.iter().map(|&v| weight_code(v, bf)).collect(),
    });
    Ok(NetworkParams { layers, fc })
}

/// Feature rows onto the state grid (full 256-code range).
pub fn quantize_features(features: &[Vec<f64>], state: QFormat) -> Vec<Vec<i8>> {
    features.iter().map(|r| r.iter().map(|&v| quantize(v, state).code).collect()).collect()
}
