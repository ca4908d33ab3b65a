// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! Mapping toolchain and transaction-level simulator for a grid of small
//! fixed-point LSTM dies connected by 4-bit systolic links.

pub mod actlut;
pub mod lstm_ref;
pub mod mapper;
pub mod perf;
pub mod qformat;
pub mod sim;
pub mod tiling;
