// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

use super::{check_dim, FcParams, Gate, LayerParams, LstmError, LstmState, Matrix, NetworkParams};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec(m: &Matrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| m.row(r).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub fn cell_step_float(
    p: &LayerParams<f64>,
    state: &LstmState<f64>,
    x: &[f64],
) -> Result<LstmState<f64>, LstmError> {
    p.validate()?;
    let nh = p.n_hidden();
    check_dim("input vector", p.n_in(), x.len())?;
    check_dim("h state", nh, state.h.len())?;
    check_dim("c state", nh, state.c.len())?;

    let pre = |g: Gate| -> Vec<f64> {
        let k = g.index();
        let wx = matvec(&p.w_x[k], x);
        let wh = matvec(&p.w_h[k], &state.h);
        (0..nh).map(|j| wx[j] + wh[j] + p.bias[k][j]).collect()
    };
    let pi = pre(Gate::Input);
    let pf = pre(Gate::Forget);
    let pc = pre(Gate::Cell);
    let po = pre(Gate::Output);

    let mut h = vec![0.0; nh];
    let mut c = vec![0.0; nh];
    for j in 0..nh {
        let i = sigmoid(pi[j] + p.peephole[0][j] * state.c[j]);
        let f = sigmoid(pf[j] + p.peephole[1][j] * state.c[j]);
        c[j] = f * state.c[j] + i * pc[j].tanh();
        let o = sigmoid(po[j] + p.peephole[2][j] * c[j]);
        h[j] = o * c[j].tanh();
    }
    Ok(LstmState { h, c })
}

pub fn fc_step_float(p: &FcParams<f64>, h: &[f64]) -> Result<Vec<f64>, LstmError> {
    p.validate()?;
    check_dim("fc input", p.n_in(), h.len())?;
    Ok(matvec(&p.w, h).iter().zip(&p.b).map(|(a, b)| sigmoid(a + b)).collect())
}

/// Runs every step through all layers from zero state. Returns the FC
/// output per step, or the last layer's `h` without an FC layer.
pub fn infer_float(p: &NetworkParams<f64>, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LstmError> {
    p.validate()?;
    let mut states: Vec<LstmState<f64>> = p.layers.iter().map(|l| LstmState::zeros(l.n_hidden())).collect();
    let mut out = Vec::with_capacity(features.len());
    for x in features {
        let mut v = x.clone();
        for (layer, st) in p.layers.iter().zip(states.iter_mut()) {
            *st = cell_step_float(layer, st, &v)?;
            v = st.h.clone();
        }
        out.push(match &p.fc {
            Some(fc) => fc_step_float(fc, &v)?,
            None => v,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm_ref::NetworkSpec;

    #[test]
    fn zero_layer_gives_zero_state() {
        let p = LayerParams::<f64>::zeros(3, 2);
        let s = cell_step_float(&p, &LstmState::zeros(2), &[0.0; 3]).unwrap();
        assert_eq!(s.h, vec![0.0; 2]);
        assert_eq!(s.c, vec![0.0; 2]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = LayerParams::<f64>::zeros(1, 1);
        p.bias[Gate::Forget.index()][0] = 1e3;
        let st = LstmState { h: vec![0.0], c: vec![0.7] };
        let s = cell_step_float(&p, &st, &[0.0]).unwrap();
        assert!((s.c[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        let p = LayerParams::<f64>::zeros(3, 2);
        assert!(cell_step_float(&p, &LstmState::zeros(2), &[0.0; 2]).is_err());
        assert!(cell_step_float(&p, &LstmState::zeros(3), &[0.0; 3]).is_err());
    }

    #[test]
    fn zero_fc_outputs_half() {
        let fc = FcParams { w: Matrix::zeros(3, 2), b: vec![0.0; 3] };
        assert_eq!(fc_step_float(&fc, &[0.3, -0.2]).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn empty_sequence() {
        let s = NetworkSpec::uniform(1, 2, 2, None);
        let p = s.random_float_params(0, 0.5);
        assert!(infer_float(&p, &[]).unwrap().is_empty());
    }
}
