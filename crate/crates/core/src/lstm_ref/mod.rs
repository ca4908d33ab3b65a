// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! Single-device LSTM inference: a full-precision reference and the
//! bit-exact fixed-point golden model, plus parameter import/export.
//!
//! The fixed-point path evaluates each gate pre-activation as Listing-order
//! multiply-accumulates (x-loop, h-loop, peephole, bias) in a 16-bit
//! saturating register. When a layer is too wide for one die, the dot
//! product is split into `blocks` column blocks; each block is accumulated
//! from zero and the block results are combined left to right with a
//! saturating add, exactly as partial sums are combined along a grid row.
//! With `blocks == 1` this is the plain single-die order.

mod container;
mod fixed;
mod float;

pub use container::{
    read_features, read_network, write_features_f32, write_features_i8, write_network_f32,
    write_network_i8, ContainerError, DType, Features, LoadedNetwork, Manifest, TensorEntry, TensorRole,
    SCHEMA_VERSION,
};
pub use fixed::{
    cell_step_fixed, cell_update, fc_step_fixed, hidden_update, infer_fixed, quantize_features, quantize_params_uniform,
};
pub use float::{cell_step_float, fc_step_float, infer_float};

use crate::qformat::{FormatError, QFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension { what: String, expected: usize, actual: usize },
    #[error("network has no layers")]
    Empty,
    #[error("invalid format set: {0}")]
    Formats(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

pub(crate) fn check_dim(what: impl Into<String>, expected: usize, actual: usize) -> Result<(), LstmError> {
    if expected == actual {
        Ok(())
    } else {
        Err(LstmError::Dimension { what: what.into(), expected, actual })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gate {
    Input,
    Forget,
    Cell,
    Output,
}

impl Gate {
    /// Order in which the hardware computes and reduces the gates.
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Cell, Gate::Output];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Slot in the peephole array; the cell candidate has no peephole.
    pub fn peephole_slot(self) -> Option<usize> {
        match self {
            Gate::Input => Some(0),
            Gate::Forget => Some(1),
            Gate::Cell => None,
            Gate::Output => Some(2),
        }
    }

    pub fn letter(self) -> char {
        match self {
            Gate::Input => 'i',
            Gate::Forget => 'f',
            Gate::Cell => 'c',
            Gate::Output => 'o',
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::default(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, LstmError> {
        check_dim("matrix data length", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Parameters of one LSTM layer. Arrays are indexed by [`Gate::index`]
/// (weights, biases) or [`Gate::peephole_slot`] (peepholes).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub w_x: [Matrix<T>; 4],
    pub w_h: [Matrix<T>; 4],
    pub peephole: [Vec<T>; 3],
    pub bias: [Vec<T>; 4],
}

impl<T: Copy + Default + PartialEq> LayerParams<T> {
    pub fn zeros(n_in: usize, n_hidden: usize) -> Self {
        Self {
            w_x: std::array::from_fn(|_| Matrix::zeros(n_hidden, n_in)),
            w_h: std::array::from_fn(|_| Matrix::zeros(n_hidden, n_hidden)),
            peephole: std::array::from_fn(|_| vec![T::default(); n_hidden]),
            bias: std::array::from_fn(|_| vec![T::default(); n_hidden]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w_x[0].cols()
    }

    pub fn n_hidden(&self) -> usize {
        self.w_x[0].rows()
    }

    /// A layer without peephole connections.
    pub fn is_vanilla(&self) -> bool {
        self.peephole.iter().all(|p| p.iter().all(|&v| v == T::default()))
    }

    pub fn validate(&self) -> Result<(), LstmError> {
        let (ni, nh) = (self.n_in(), self.n_hidden());
        for g in Gate::ALL {
            let k = g.index();
            check_dim(format!("w_x[{}] rows", g.letter()), nh, self.w_x[k].rows())?;
            check_dim(format!("w_x[{}] cols", g.letter()), ni, self.w_x[k].cols())?;
            check_dim(format!("w_h[{}] rows", g.letter()), nh, self.w_h[k].rows())?;
            check_dim(format!("w_h[{}] cols", g.letter()), nh, self.w_h[k].cols())?;
            check_dim(format!("bias[{}]", g.letter()), nh, self.bias[k].len())?;
        }
        for p in &self.peephole {
            check_dim("peephole length", nh, p.len())?;
        }
        Ok(())
    }

    pub fn map<U: Copy + Default + PartialEq>(&self, f: impl Fn(T) -> U + Copy) -> LayerParams<U> {
        LayerParams {
            w_x: std::array::from_fn(|k| self.w_x[k].map(f)),
            w_h: std::array::from_fn(|k| self.w_h[k].map(f)),
            peephole: std::array::from_fn(|k| self.peephole[k].iter().map(|&v| f(v)).collect()),
            bias: std::array::from_fn(|k| self.bias[k].iter().map(|&v| f(v)).collect()),
        }
    }
}

/// Non-recurrent output layer `y = σ(W h + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams<T> {
    pub w: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Copy + Default> FcParams<T> {
    pub fn n_out(&self) -> usize {
        self.w.rows()
    }

    pub fn n_in(&self) -> usize {
        self.w.cols()
    }

    pub fn validate(&self) -> Result<(), LstmError> {
        check_dim("fc bias length", self.w.rows(), self.b.len())
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U + Copy) -> FcParams<U> {
        FcParams { w: self.w.map(f), b: self.b.iter().map(|&v| f(v)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub layers: Vec<LayerParams<T>>,
    pub fc: Option<FcParams<T>>,
}

impl<T: Copy + Default + PartialEq> NetworkParams<T> {
    pub fn validate(&self) -> Result<(), LstmError> {
        if self.layers.is_empty() {
            return Err(LstmError::Empty);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if l > 0 {
                check_dim(format!("layer {l} input width"), self.layers[l - 1].n_hidden(), layer.n_in())?;
            }
        }
        if let Some(fc) = &self.fc {
            fc.validate()?;
            check_dim("fc input width", self.layers.last().unwrap().n_hidden(), fc.n_in())?;
        }
        Ok(())
    }

    pub fn shape(&self) -> Vec<LayerShape> {
        self.layers.iter().map(|l| LayerShape { inputs: l.n_in(), hidden: l.n_hidden() }).collect()
    }
}

/// Recurrent state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Copy + Default> LstmState<T> {
    pub fn zeros(n_hidden: usize) -> Self {
        Self { h: vec![T::default(); n_hidden], c: vec![T::default(); n_hidden] }
    }
}

/// Q-formats per tensor role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatSet {
    /// Inputs, hidden state and cell state (the LUT input format too).
    pub state: QFormat,
    /// Weight matrices and peephole vectors.
    pub weight: QFormat,
    pub bias: QFormat,
    /// Sigmoid/tanh outputs: gates, cell candidate, tanh(c), FC outputs.
    pub gate: QFormat,
}

impl Default for FormatSet {
    fn default() -> Self {
        Self { state: QFormat::Q2_5, weight: QFormat::Q2_5, bias: QFormat::Q2_5, gate: QFormat::Q0_7 }
    }
}

impl FormatSet {
    /// Fractional bits of every pre-activation accumulator.
    pub fn acc_frac(&self) -> u8 {
        self.weight.frac_bits() + self.state.frac_bits()
    }

    pub fn validate(&self) -> Result<(), LstmError> {
        let acc = self.acc_frac();
        if self.bias.frac_bits() > acc {
            return Err(LstmError::Formats(format!(
                "bias has more fractional bits ({}) than the accumulator ({acc})",
                self.bias.frac_bits()
            )));
        }
        if 2 * self.gate.frac_bits() < self.state.frac_bits() {
            return Err(LstmError::Formats("gate products are coarser than the state format".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub hidden: usize,
}

/// Network shape and quantization formats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerShape>,
    /// Width of the optional fully-connected output layer.
    pub outputs: Option<usize>,
    #[serde(default = "default_true")]
    pub peephole: bool,
    #[serde(default)]
    pub formats: FormatSet,
}

fn default_true() -> bool {
    true
}

impl NetworkSpec {
    /// `n_layers` layers of width `hidden` fed by `inputs` features.
    pub fn uniform(n_layers: usize, inputs: usize, hidden: usize, outputs: Option<usize>) -> Self {
        let layers = (0..n_layers)
            .map(|l| LayerShape { inputs: if l == 0 { inputs } else { hidden }, hidden })
            .collect();
        Self { layers, outputs, peephole: true, formats: FormatSet::default() }
    }

    pub fn validate(&self) -> Result<(), LstmError> {
        if self.layers.is_empty() {
            return Err(LstmError::Empty);
        }
        for (l, s) in self.layers.iter().enumerate() {
            if s.hidden == 0 || s.inputs == 0 {
                return Err(LstmError::Dimension { what: format!("layer {l} width"), expected: 1, actual: 0 });
            }
            if l > 0 {
                check_dim(format!("layer {l} input width"), self.layers[l - 1].hidden, s.inputs)?;
            }
        }
        if self.outputs == Some(0) {
            return Err(LstmError::Dimension { what: "fc outputs".into(), expected: 1, actual: 0 });
        }
        self.formats.validate()
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].inputs
    }

    /// Width of each per-step output vector.
    pub fn output_width(&self) -> usize {
        self.outputs.unwrap_or_else(|| self.layers.last().map_or(0, |l| l.hidden))
    }

    pub fn check_params<T: Copy + Default + PartialEq>(&self, p: &NetworkParams<T>) -> Result<(), LstmError> {
        p.validate()?;
        check_dim("layer count", self.layers.len(), p.layers.len())?;
        for (l, (s, lp)) in self.layers.iter().zip(&p.layers).enumerate() {
            check_dim(format!("layer {l} inputs"), s.inputs, lp.n_in())?;
            check_dim(format!("layer {l} hidden"), s.hidden, lp.n_hidden())?;
        }
        check_dim("fc outputs", self.outputs.unwrap_or(0), p.fc.as_ref().map_or(0, |f| f.n_out()))
    }

    /// Seeded random parameters with every entry uniform in `[-scale, scale]`.
    pub fn random_float_params(&self, seed: u64, scale: f64) -> NetworkParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| rng.gen_range(-scale..=scale);
        let layers = self
            .layers
            .iter()
            .map(|s| {
                let mut p = LayerParams::<f64>::zeros(s.inputs, s.hidden);
                for k in 0..4 {
                    p.w_x[k] = Matrix::from_fn(s.hidden, s.inputs, |_, _| draw(&mut rng));
                    p.w_h[k] = Matrix::from_fn(s.hidden, s.hidden, |_, _| draw(&mut rng));
                    p.bias[k] = (0..s.hidden).map(|_| draw(&mut rng)).collect();
                }
                if self.peephole {
                    for k in 0..3 {
                        p.peephole[k] = (0..s.hidden).map(|_| draw(&mut rng)).collect();
                    }
                }
                p
            })
            .collect();
        let fc = self.outputs.map(|no| {
            let nh = self.layers.last().unwrap().hidden;
            FcParams {
                w: Matrix::from_fn(no, nh, |_, _| draw(&mut rng)),
                b: (0..no).map(|_| draw(&mut rng)).collect(),
            }
        });
        NetworkParams { layers, fc }
    }

    /// Seeded random codes spanning the whole symmetric range `[-127, 127]`,
    /// so accumulators saturate regularly.
    pub fn random_codes(&self, seed: u64) -> NetworkParams<i8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = self
            .layers
            .iter()
            .map(|s| {
                let mut p = LayerParams::<i8>::zeros(s.inputs, s.hidden);
                for k in 0..4 {
                    p.w_x[k] = Matrix::from_fn(s.hidden, s.inputs, |_, _| rng.gen_range(-127..=127));
                    p.w_h[k] = Matrix::from_fn(s.hidden, s.hidden, |_, _| rng.gen_range(-127..=127));
                    p.bias[k] = (0..s.hidden).map(|_| rng.gen_range(-127..=127)).collect();
                }
                if self.peephole {
                    for k in 0..3 {
                        p.peephole[k] = (0..s.hidden).map(|_| rng.gen_range(-127..=127)).collect();
                    }
                }
                p
            })
            .collect();
        let fc = self.outputs.map(|no| {
            let nh = self.layers.last().unwrap().hidden;
            FcParams {
                w: Matrix::from_fn(no, nh, |_, _| rng.gen_range(-127..=127)),
                b: (0..no).map(|_| rng.gen_range(-127..=127)).collect(),
            }
        });
        NetworkParams { layers, fc }
    }

    /// Seeded random feature codes, `steps` rows of `n_inputs` codes.
    pub fn random_feature_codes(&self, seed: u64, steps: usize) -> Vec<Vec<i8>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
        (0..steps).map(|_| (0..self.n_inputs()).map(|_| rng.gen::<i8>()).collect()).collect()
    }
}

/// Fixed-point network: codes plus the formats they are expressed in.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantNetwork {
    pub params: NetworkParams<i8>,
    pub formats: FormatSet,
}

impl QuantNetwork {
    pub fn new(params: NetworkParams<i8>, formats: FormatSet) -> Result<Self, LstmError> {
        params.validate()?;
        formats.validate()?;
        Ok(Self { params, formats })
    }

    /// Monolithic inference with every layer evaluated as one block.
    pub fn infer(&self, features: &[Vec<i8>]) -> Result<Vec<Vec<i8>>, LstmError> {
        let blocks = vec![1; self.params.layers.len()];
        infer_fixed(self, features, &blocks)
    }
}
