// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! Parameter and feature container: a JSON manifest next to a flat
//! little-endian blob of int8 codes or f32 values.

use super::{FcParams, FormatSet, LayerParams, LstmError, Matrix, NetworkParams, QuantNetwork};
use crate::qformat::QFormat;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema version {0}")]
    Schema(u32),
    #[error("tensor {0} is missing")]
    Missing(String),
    #[error("tensor {name}: {reason}")]
    Tensor { name: String, reason: String },
    #[error(transparent)]
    Network(#[from] LstmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    I8,
    F32,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::I8 => 1,
            DType::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Weight,
    Peephole,
    Bias,
    FcWeight,
    FcBias,
    Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: TensorRole,
    pub dtype: DType,
    /// Q-format of int8 tensors; absent for floats.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frac_bits: Option<u8>,
    /// Byte offset into the blob.
    pub offset: usize,
}

impl TensorEntry {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formats: Option<FormatSet>,
    pub tensors: Vec<TensorEntry>,
}

/// A network read back from a container, in whichever precision it was stored.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedNetwork {
    Float(NetworkParams<f64>),
    Quant(QuantNetwork),
}

/// Feature rows read back from a container.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Float(Vec<Vec<f64>>),
    Quant { rows: Vec<Vec<i8>>, format: QFormat },
}

struct Builder<T> {
    dtype: DType,
    frac: Option<u8>,
    tensors: Vec<TensorEntry>,
    values: Vec<T>,
}

impl<T: Copy> Builder<T> {
    fn new(dtype: DType) -> Self {
        Self { dtype, frac: None, tensors: Vec::new(), values: Vec::new() }
    }

    fn push(&mut self, name: String, shape: Vec<usize>, role: TensorRole, data: &[T]) {
        self.tensors.push(TensorEntry {
            name,
            shape,
            role,
            dtype: self.dtype,
            frac_bits: self.frac,
            offset: self.values.len() * self.dtype.size(),
        });
        self.values.extend_from_slice(data);
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ContainerError + '_ {
    move |source| ContainerError::Io { path: path.to_path_buf(), source }
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn write_container(
    manifest_path: &Path,
    formats: Option<FormatSet>,
    tensors: Vec<TensorEntry>,
    blob: Vec<u8>,
) -> Result<(), ContainerError> {
    let bp = blob_path(manifest_path);
    let m = Manifest {
        schema_version: SCHEMA_VERSION,
        blob: bp.file_name().unwrap().to_string_lossy().into_owned(),
        formats,
        tensors,
    };
    fs::write(&bp, blob).map_err(io_err(&bp))?;
    let text = serde_json::to_string_pretty(&m)?;
    fs::write(manifest_path, text).map_err(io_err(manifest_path))
}

fn collect<T: Copy + Default + PartialEq>(
    b: &mut Builder<T>,
    p: &NetworkParams<T>,
    frac: impl Fn(TensorRole) -> Option<u8>,
) {
    for (l, layer) in p.layers.iter().enumerate() {
        let (ni, nh) = (layer.n_in(), layer.n_hidden());
        for g in super::Gate::ALL {
            let k = g.index();
            b.frac = frac(TensorRole::Weight);
            b.push(format!("layer{l}.w_x.{}", g.letter()), vec![nh, ni], TensorRole::Weight, layer.w_x[k].as_slice());
            b.push(format!("layer{l}.w_h.{}", g.letter()), vec![nh, nh], TensorRole::Weight, layer.w_h[k].as_slice());
        }
        for g in super::Gate::ALL {
            if let Some(s) = g.peephole_slot() {
                b.frac = frac(TensorRole::Peephole);
                b.push(format!("layer{l}.peephole.{}", g.letter()), vec![nh], TensorRole::Peephole, &layer.peephole[s]);
            }
        }
        for g in super::Gate::ALL {
            b.frac = frac(TensorRole::Bias);
            b.push(format!("layer{l}.bias.{}", g.letter()), vec![nh], TensorRole::Bias, &layer.bias[g.index()]);
        }
    }
    if let Some(fc) = &p.fc {
        b.frac = frac(TensorRole::FcWeight);
        b.push("fc.w".into(), vec![fc.n_out(), fc.n_in()], TensorRole::FcWeight, fc.w.as_slice());
        b.frac = frac(TensorRole::FcBias);
        b.push("fc.b".into(), vec![fc.n_out()], TensorRole::FcBias, &fc.b);
    }
}

pub fn write_network_i8(manifest_path: &Path, net: &QuantNetwork) -> Result<(), ContainerError> {
    net.params.validate()?;
    let f = net.formats;
    let mut b = Builder::<i8>::new(DType::I8);
    collect(&mut b, &net.params, |role| {
        Some(match role {
            TensorRole::Bias | TensorRole::FcBias => f.bias.frac_bits(),
            _ => f.weight.frac_bits(),
        })
    });
    let blob = b.values.iter().map(|&v| v as u8).collect();
    write_container(manifest_path, Some(f), b.tensors, blob)
}

pub fn write_network_f32(manifest_path: &Path, p: &NetworkParams<f64>) -> Result<(), ContainerError> {
    p.validate()?;
    let mut b = Builder::<f64>::new(DType::F32);
    collect(&mut b, p, |_| None);
    let blob = b.values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    write_container(manifest_path, None, b.tensors, blob)
}

pub fn write_features_i8(manifest_path: &Path, rows: &[Vec<i8>], format: QFormat) -> Result<(), ContainerError> {
    let width = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * width);
    for (t, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(ContainerError::Tensor { name: "features".into(), reason: format!("row {t} has {} values, expected {width}", r.len()) });
        }
        data.extend(r.iter().map(|&v| v as u8));
    }
    let entry = TensorEntry {
        name: "features".into(),
        shape: vec![rows.len(), width],
        role: TensorRole::Features,
        dtype: DType::I8,
        frac_bits: Some(format.frac_bits()),
        offset: 0,
    };
    write_container(manifest_path, None, vec![entry], data)
}

pub fn write_features_f32(manifest_path: &Path, rows: &[Vec<f64>]) -> Result<(), ContainerError> {
    let width = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * width * 4);
    for (t, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(ContainerError::Tensor { name: "features".into(), reason: format!("row {t} has {} values, expected {width}", r.len()) });
        }
        data.extend(r.iter().flat_map(|&v| (v as f32).to_le_bytes()));
    }
    let entry = TensorEntry {
        name: "features".into(),
        shape: vec![rows.len(), width],
        role: TensorRole::Features,
        dtype: DType::F32,
        frac_bits: None,
        offset: 0,
    };
    write_container(manifest_path, None, vec![entry], data)
}

struct Opened {
    manifest: Manifest,
    blob: Vec<u8>,
    index: HashMap<String, usize>,
}

impl Opened {
    fn load(path: &Path) -> Result<Self, ContainerError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(ContainerError::Schema(manifest.schema_version));
        }
        let bp = path.parent().unwrap_or(Path::new(".")).join(&manifest.blob);
        let blob = fs::read(&bp).map_err(io_err(&bp))?;
        let index = manifest.tensors.iter().enumerate().map(|(i, t)| (t.name.clone(), i)).collect();
        let o = Self { manifest, blob, index };
        for t in &o.manifest.tensors {
            let end = t.offset + t.len() * t.dtype.size();
            if end > o.blob.len() {
                return Err(ContainerError::Tensor { name: t.name.clone(), reason: format!("extends to byte {end} past blob end {}", o.blob.len()) });
            }
        }
        Ok(o)
    }

    fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.index.get(name).map(|&i| &self.manifest.tensors[i])
    }

    fn dtype(&self) -> DType {
        self.manifest.tensors.first().map_or(DType::I8, |t| t.dtype)
    }

    fn raw(&self, t: &TensorEntry) -> &[u8] {
        &self.blob[t.offset..t.offset + t.len() * t.dtype.size()]
    }

    fn tensor<T>(&self, name: &str, shape: &[usize], conv: &impl Fn(&[u8]) -> Vec<T>) -> Result<Vec<T>, ContainerError> {
        let t = self.entry(name).ok_or_else(|| ContainerError::Missing(name.into()))?;
        if t.shape != shape {
            return Err(ContainerError::Tensor { name: name.into(), reason: format!("shape {:?}, expected {:?}", t.shape, shape) });
        }
        Ok(conv(self.raw(t)))
    }

    fn shape_of(&self, name: &str) -> Result<&[usize], ContainerError> {
        self.entry(name).map(|t| t.shape.as_slice()).ok_or_else(|| ContainerError::Missing(name.into()))
    }

    fn network<T: Copy + Default + PartialEq>(&self, conv: impl Fn(&[u8]) -> Vec<T>) -> Result<NetworkParams<T>, ContainerError> {
        let mut layers = Vec::new();
        while self.entry(&format!("layer{}.w_x.i", layers.len())).is_some() {
            let l = layers.len();
            let s = self.shape_of(&format!("layer{l}.w_x.i"))?;
            let [nh, ni] = s else {
                return Err(ContainerError::Tensor { name: format!("layer{l}.w_x.i"), reason: "expected a matrix".into() });
            };
            let (nh, ni) = (*nh, *ni);
            let mut p = LayerParams::<T>::zeros(ni, nh);
            for g in super::Gate::ALL {
                let k = g.index();
                let c = g.letter();
                p.w_x[k] = Matrix::from_vec(nh, ni, self.tensor(&format!("layer{l}.w_x.{c}"), &[nh, ni], &conv)?)?;
                p.w_h[k] = Matrix::from_vec(nh, nh, self.tensor(&format!("layer{l}.w_h.{c}"), &[nh, nh], &conv)?)?;
                p.bias[k] = self.tensor(&format!("layer{l}.bias.{c}"), &[nh], &conv)?;
                if let Some(s) = g.peephole_slot() {
                    let name = format!("layer{l}.peephole.{c}");
                    if self.entry(&name).is_some() {
                        p.peephole[s] = self.tensor(&name, &[nh], &conv)?;
                    }
                }
            }
            layers.push(p);
        }
        let fc = match self.entry("fc.w") {
            Some(t) => {
                let [no, nh] = t.shape[..] else {
                    return Err(ContainerError::Tensor { name: "fc.w".into(), reason: "expected a matrix".into() });
                };
                Some(FcParams {
                    w: Matrix::from_vec(no, nh, self.tensor("fc.w", &[no, nh], &conv)?)?,
                    b: self.tensor("fc.b", &[no], &conv)?,
                })
            }
            None => None,
        };
        let p = NetworkParams { layers, fc };
        p.validate()?;
        Ok(p)
    }
}

fn conv_i8(b: &[u8]) -> Vec<i8> {
    b.iter().map(|&v| v as i8).collect()
}

fn conv_f32(b: &[u8]) -> Vec<f64> {
    b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect()
}

pub fn read_network(manifest_path: &Path) -> Result<LoadedNetwork, ContainerError> {
    let o = Opened::load(manifest_path)?;
    match o.dtype() {
        DType::F32 => Ok(LoadedNetwork::Float(o.network(conv_f32)?)),
        DType::I8 => {
            let params = o.network(conv_i8)?;
            let mut formats = o.manifest.formats.unwrap_or_default();
            let frac_of = |name: &str| o.entry(name).and_then(|t| t.frac_bits);
            if let Some(f) = frac_of("layer0.w_x.i") {
                formats.weight = QFormat::new(f).map_err(LstmError::from)?;
            }
            if let Some(f) = frac_of("layer0.bias.i") {
                formats.bias = QFormat::new(f).map_err(LstmError::from)?;
            }
            Ok(LoadedNetwork::Quant(QuantNetwork::new(params, formats)?))
        }
    }
}

pub fn read_features(manifest_path: &Path) -> Result<Features, ContainerError> {
    let o = Opened::load(manifest_path)?;
    let t = o.entry("features").ok_or_else(|| ContainerError::Missing("features".into()))?;
    let [steps, width] = t.shape[..] else {
        return Err(ContainerError::Tensor { name: "features".into(), reason: "expected a T × N_I matrix".into() });
    };
    let raw = o.raw(t);
    Ok(match t.dtype {
        DType::I8 => {
            let format = QFormat::new(t.frac_bits.unwrap_or(QFormat::Q2_5.frac_bits())).map_err(LstmError::from)?;
            let v = conv_i8(raw);
            Features::Quant { rows: (0..steps).map(|r| v[r * width..(r + 1) * width].to_vec()).collect(), format }
        }
        DType::F32 => {
            let v = conv_f32(raw);
            Features::Float((0..steps).map(|r| v[r * width..(r + 1) * width].to_vec()).collect())
        }
    })
}
