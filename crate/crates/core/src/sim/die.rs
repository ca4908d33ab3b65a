// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! One die: its parameter tiles, registers and datapath operations.

use super::SimError;
use crate::actlut::ActLuts;
use crate::lstm_ref::{cell_update, hidden_update, FormatSet, Gate};
use crate::mapper::{DiePlan, Role};
use crate::qformat::{mac, requantize, Acc16, Q8};

#[derive(Debug, Clone)]
pub struct Die {
    pub id: usize,
    pub physical: usize,
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    pub role: Role,
    pub ni_t: usize,
    pub nh_t: usize,
    pub no_t: usize,
    peephole_enabled: bool,
    w_x: [Vec<i8>; 4],
    w_h: [Vec<i8>; 4],
    peephole: [Vec<i8>; 3],
    bias: [Vec<i8>; 4],
    fc_w: Vec<i8>,
    fc_b: Vec<i8>,
    /// Input tile `j`.
    pub x: Vec<i8>,
    /// Hidden tile `j` of the previous step (the recurrent operand).
    pub h_in: Vec<i8>,
    /// Cell state of row tile `i` (masters).
    pub c: Vec<i8>,
    /// Fresh hidden tile `i` (masters).
    pub h_out: Vec<i8>,
    pub partial: [Vec<Acc16>; 4],
    pub fc_partial: Vec<Acc16>,
    pub y: Vec<i8>,
    pub loaded: bool,
}

impl Die {
    pub fn new(p: &DiePlan, ni_t: usize, nh_t: usize, no_t: usize, peephole: bool) -> Self {
        let mut d = Self {
            id: p.id,
            physical: p.physical,
            layer: p.layer,
            row: p.row,
            col: p.col,
            role: p.role,
            ni_t,
            nh_t,
            no_t,
            peephole_enabled: peephole,
            w_x: Default::default(),
            w_h: Default::default(),
            peephole: Default::default(),
            bias: Default::default(),
            fc_w: Vec::new(),
            fc_b: Vec::new(),
            x: Vec::new(),
            h_in: Vec::new(),
            c: Vec::new(),
            h_out: Vec::new(),
            partial: Default::default(),
            fc_partial: Vec::new(),
            y: Vec::new(),
            loaded: false,
        };
        d.wipe();
        d
    }

    pub fn is_master(&self) -> bool {
        self.role == Role::Master
    }

    /// Clears parameters and registers, as when another layer used the die.
    pub fn wipe(&mut self) {
        let (ni, nh, no) = (self.ni_t, self.nh_t, self.no_t);
        self.w_x = std::array::from_fn(|_| vec![0; nh * ni]);
        self.w_h = std::array::from_fn(|_| vec![0; nh * nh]);
        self.peephole = std::array::from_fn(|_| vec![0; nh]);
        self.bias = std::array::from_fn(|_| vec![0; nh]);
        self.fc_w = vec![0; no * nh];
        self.fc_b = vec![0; no];
        self.x = vec![0; ni];
        self.h_in = vec![0; nh];
        self.c = vec![0; nh];
        self.h_out = vec![0; nh];
        self.partial = Default::default();
        self.fc_partial = Vec::new();
        self.y = vec![0; no];
        self.loaded = false;
    }

    /// Bytes of the parameter image, in stream order.
    pub fn param_bytes(&self) -> usize {
        let (ni, nh, no) = (self.ni_t, self.nh_t, self.no_t);
        let mut n = 4 * nh * (ni + nh) + no * nh;
        if self.is_master() {
            n += 4 * nh + no;
            if self.peephole_enabled {
                n += 3 * nh;
            }
        }
        n
    }

    /// Stores a parameter image: per gate the `W_x` then `W_h` tile (row
    /// major), then on masters the peepholes and biases, then the output
    /// layer tile and on masters its bias.
    pub fn load_image(&mut self, image: &[i8]) -> Result<(), SimError> {
        if image.len() != self.param_bytes() {
            return Err(SimError::Params(format!(
                "die {} expected a {}-byte image, got {}",
                self.id,
                self.param_bytes(),
                image.len()
            )));
        }
        let mut it = image.iter().copied();
        let mut take = |n: usize| -> Vec<i8> { it.by_ref().take(n).collect() };
        for k in 0..4 {
            self.w_x[k] = take(self.nh_t * self.ni_t);
            self.w_h[k] = take(self.nh_t * self.nh_t);
        }
        if self.is_master() {
            if self.peephole_enabled {
                for k in 0..3 {
                    self.peephole[k] = take(self.nh_t);
                }
            }
            for k in 0..4 {
                self.bias[k] = take(self.nh_t);
            }
        }
        self.fc_w = take(self.no_t * self.nh_t);
        if self.is_master() {
            self.fc_b = take(self.no_t);
        }
        self.loaded = true;
        Ok(())
    }

    /// Local partial sums of one gate: x loop then h loop from zero.
    pub fn compute_gate(&mut self, g: Gate, f: &FormatSet) {
        let k = g.index();
        let (ni, nh) = (self.ni_t, self.nh_t);
        self.partial[k] = (0..nh)
            .map(|r| {
                let mut acc = Acc16::zero(f.acc_frac());
                for (&w, &x) in self.w_x[k][r * ni..(r + 1) * ni].iter().zip(&self.x) {
                    acc = mac(acc, Q8::new(w, f.weight), Q8::new(x, f.state));
                }
                for (&w, &h) in self.w_h[k][r * nh..(r + 1) * nh].iter().zip(&self.h_in) {
                    acc = mac(acc, Q8::new(w, f.weight), Q8::new(h, f.state));
                }
                acc
            })
            .collect();
    }

    /// Adds received partials from the left neighbour.
    pub fn combine(&mut self, g: Gate, received: &[i16], f: &FormatSet) {
        combine_into(&mut self.partial[g.index()], received, f.acc_frac());
    }

    pub fn partial_values(&self, g: Gate) -> Vec<i16> {
        self.partial[g.index()].iter().map(|a| a.value).collect()
    }

    /// Activations and cell update on the completed sums of row tile `i`.
    pub fn element_wise(&mut self, f: &FormatSet, luts: &ActLuts) -> Result<(), SimError> {
        if !self.is_master() {
            return Err(SimError::Role { die: self.id, op: "element-wise" });
        }
        let act = |acc: Acc16, sig: bool| -> i8 {
            let q = requantize(acc, f.state).expect("accumulator finer than state");
            if sig {
                luts.sigmoid.lookup(q.code)
            } else {
                luts.tanh.lookup(q.code)
            }
        };
        let finish = |g: Gate, r: usize, c_peep: i8, d: &Die| -> Acc16 {
            let k = g.index();
            let mut acc = d.partial[k][r];
            if let Some(s) = g.peephole_slot() {
                acc = mac(acc, Q8::new(d.peephole[s][r], f.weight), Q8::new(c_peep, f.state));
            }
            acc.add_code(Q8::new(d.bias[k][r], f.bias))
        };
        for r in 0..self.nh_t {
            let cp = self.c[r];
            let i = act(finish(Gate::Input, r, cp, self), true);
            let fg = act(finish(Gate::Forget, r, cp, self), true);
            let cand = act(finish(Gate::Cell, r, 0, self), false);
            let c = cell_update(fg, cp, i, cand, f);
            let o = act(finish(Gate::Output, r, c, self), true);
            self.c[r] = c;
            self.h_out[r] = hidden_update(o, luts.tanh.lookup(c), f);
        }
        Ok(())
    }

    /// Output-layer partials over hidden tile `j`.
    pub fn fc_compute(&mut self, f: &FormatSet) {
        let nh = self.nh_t;
        self.fc_partial = (0..self.no_t)
            .map(|r| {
                let mut acc = Acc16::zero(f.acc_frac());
                for (&w, &h) in self.fc_w[r * nh..(r + 1) * nh].iter().zip(&self.h_in) {
                    acc = mac(acc, Q8::new(w, f.weight), Q8::new(h, f.state));
                }
                acc
            })
            .collect();
    }

    pub fn fc_combine(&mut self, received: &[i16], f: &FormatSet) {
        combine_into(&mut self.fc_partial, received, f.acc_frac());
    }

    pub fn fc_values(&self) -> Vec<i16> {
        self.fc_partial.iter().map(|a| a.value).collect()
    }

    pub fn fc_activate(&mut self, f: &FormatSet, luts: &ActLuts) -> Result<(), SimError> {
        if !self.is_master() {
            return Err(SimError::Role { die: self.id, op: "fc-activation" });
        }
        self.y = self
            .fc_partial
            .iter()
            .zip(&self.fc_b)
            .map(|(&acc, &b)| {
                let q = requantize(acc.add_code(Q8::new(b, f.bias)), f.state).expect("accumulator finer than state");
                luts.sigmoid.lookup(q.code)
            })
            .collect();
        Ok(())
    }
}

fn combine_into(own: &mut [Acc16], received: &[i16], frac: u8) {
    for (a, &v) in own.iter_mut().zip(received) {
        *a = Acc16::new(v, frac).saturating_add(*a);
    }
}
