// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! `slstm`: plan, simulate and extrapolate systolic LSTM grids.

mod commands;
mod config;
mod table;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "slstm", version, about = "Transaction-level simulator and mapper for systolic multi-die LSTM grids")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for generated networks and features.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Run all layers on one grid, reloading parameters per layer.
    #[arg(long, global = true)]
    pub reload: bool,
    /// Share one parameter stream per grid row.
    #[arg(long, global = true)]
    pub chip_select: bool,
    /// Count pins with time-multiplexed streams.
    #[arg(long, global = true)]
    pub time_multiplexed: bool,
    /// Core clock in Hz.
    #[arg(long, global = true, value_name = "HZ")]
    pub freq: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Txt)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Txt,
}

/// Network shape shortcuts; they override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct NetArgs {
    #[arg(long)]
    pub layers: Option<usize>,
    /// Hidden units per layer.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Input features of the first layer.
    #[arg(long)]
    pub inputs: Option<usize>,
    /// Width of the output layer; 0 for none.
    #[arg(long)]
    pub outputs: Option<usize>,
    /// Time steps of generated features.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Map a network onto die grids and check capacity and pins.
    Plan(NetArgs),
    /// Simulate a network and check it against the reference model.
    Run {
        #[command(flatten)]
        net: NetArgs,
        /// Corrupt one simulated output code before the comparison.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Compare the model against the published extrapolation table.
    Table4,
    /// Report latency, power and energy along one axis.
    Sweep {
        #[arg(long, value_enum)]
        axis: commands::Axis,
        /// Comma-separated axis values; empty for none.
        #[arg(long)]
        values: Option<String>,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Write the activation lookup tables.
    LutDump,
}

/// A failure and the exit code it maps to.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Exit {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, error: error.into() }
    }

    pub fn constraint(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: error.into() }
    }

    pub fn mismatch(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 3, error: error.into() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let g = &cli.global;
    let result = match &cli.command {
        Command::Plan(net) => commands::plan(g, net),
        Command::Run { net, inject_fault } => commands::run(g, net, *inject_fault),
        Command::Table4 => commands::table4(g),
        Command::Sweep { axis, values, net } => commands::sweep(g, net, *axis, values.as_deref()),
        Command::LutDump => commands::lut_dump(g),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
