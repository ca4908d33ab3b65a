// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! Narrow valid/ready links and the beat encoding of words and partials.

use super::SimError;
use crate::mapper::{Endpoint, LinkKind, LinkPlan};
use serde::{Deserialize, Serialize};

/// Receiver-side ready behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "model")]
pub enum ReadyModel {
    #[default]
    Always,
    /// Ready is low for the first `stall` cycles of every `period`.
    Periodic { period: u64, stall: u64 },
    Never,
}

impl ReadyModel {
    #[inline]
    pub fn ready(self, cycle: u64) -> bool {
        match self {
            ReadyModel::Always => true,
            ReadyModel::Periodic { period, stall } => period == 0 || cycle % period >= stall,
            ReadyModel::Never => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinkCounters {
    pub beats: u64,
    /// Bits driven by the sender.
    pub bits_sent: u64,
    /// Bits latched, summed over receivers.
    pub bits_received: u64,
    /// Hamming distance between consecutive beats.
    pub toggles: u64,
    /// Cycles with valid asserted.
    pub cycles_active: u64,
    /// Cycles with valid asserted and ready low.
    pub cycles_blocked: u64,
}

impl LinkCounters {
    pub fn add(&mut self, o: &LinkCounters) {
        self.beats += o.beats;
        self.bits_sent += o.bits_sent;
        self.bits_received += o.bits_received;
        self.toggles += o.toggles;
        self.cycles_active += o.cycles_active;
        self.cycles_blocked += o.cycles_blocked;
    }
}

#[derive(Debug, Clone)]
pub struct Link {
    pub id: usize,
    pub kind: LinkKind,
    pub src: Endpoint,
    pub dst: Vec<Endpoint>,
    pub width: u32,
    pub ready: ReadyModel,
    pub counters: LinkCounters,
    last_beat: u8,
}

/// Outcome of one transfer.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub end_cycle: u64,
    pub beats: Vec<u8>,
    pub usage: LinkCounters,
}

impl Link {
    pub fn new(plan: &LinkPlan, width: u32, ready: ReadyModel) -> Self {
        Self {
            id: plan.id,
            kind: plan.kind,
            src: plan.src,
            dst: plan.dst.clone(),
            width,
            ready,
            counters: LinkCounters::default(),
            last_beat: 0,
        }
    }

    /// Drives `beats` starting at `start`, one beat per accepted cycle, to
    /// `receivers` of the link's sinks. Fails if ready stays low for more
    /// than `watchdog` consecutive cycles.
    pub fn send(&mut self, start: u64, beats: &[u8], receivers: usize, watchdog: u64) -> Result<Delivery, SimError> {
        debug_assert!(receivers <= self.dst.len());
        let mut usage = LinkCounters::default();
        let mut delivered = Vec::with_capacity(beats.len());
        let mut cycle = start;
        let mut waiting = 0u64;
        let mut last = self.last_beat;
        let mut idx = 0;
        while idx < beats.len() {
            if self.ready.ready(cycle) {
                let b = beats[idx];
                usage.toggles += (b ^ last).count_ones() as u64;
                last = b;
                delivered.push(b);
                idx += 1;
                waiting = 0;
            } else {
                usage.cycles_blocked += 1;
                waiting += 1;
                if waiting > watchdog {
                    self.counters.add(&usage);
                    return Err(SimError::Deadlock { link: self.id, kind: self.kind, src: self.src, cycle });
                }
            }
            cycle += 1;
        }
        self.last_beat = last;
        let n = beats.len() as u64;
        usage.beats = n;
        usage.bits_sent = n * self.width as u64;
        usage.bits_received = n * self.width as u64 * receivers as u64;
        usage.cycles_active = cycle - start;
        self.counters.add(&usage);
        Ok(Delivery { end_cycle: cycle, beats: delivered, usage })
    }
}

/// Splits `bits`-wide values into `width`-bit beats, least significant first.
pub fn pack(values: impl IntoIterator<Item = u16>, bits: u32, width: u32) -> Vec<u8> {
    let per = bits.div_ceil(width);
    let mask = (1u16 << width) - 1;
    let mut out = Vec::new();
    for v in values {
        for k in 0..per {
            out.push(((v >> (k * width)) & mask) as u8);
        }
    }
    out
}

pub fn unpack(beats: &[u8], bits: u32, width: u32) -> Vec<u16> {
    let per = bits.div_ceil(width) as usize;
    beats
        .chunks(per)
        .map(|c| c.iter().enumerate().fold(0u16, |v, (k, &b)| v | ((b as u16) << (k as u32 * width))))
        .collect()
}

pub fn pack_codes(codes: &[i8], word_bits: u32, width: u32) -> Vec<u8> {
    pack(codes.iter().map(|&c| c as u8 as u16), word_bits, width)
}

pub fn unpack_codes(beats: &[u8], word_bits: u32, width: u32) -> Vec<i8> {
    unpack(beats, word_bits, width).into_iter().map(|v| v as u8 as i8).collect()
}

pub fn pack_partials(values: &[i16], word_bits: u32, width: u32) -> Vec<u8> {
    pack(values.iter().map(|&v| v as u16), 2 * word_bits, width)
}

pub fn unpack_partials(beats: &[u8], word_bits: u32, width: u32) -> Vec<i16> {
    unpack(beats, 2 * word_bits, width).into_iter().map(|v| v as i16).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(ready: ReadyModel) -> Link {
        let plan = LinkPlan { id: 7, kind: LinkKind::Reduction, src: Endpoint::Die(0), dst: vec![Endpoint::Die(1)] };
        Link::new(&plan, 4, ready)
    }

    #[test]
    fn byte_takes_two_beats_and_partial_four() {
        assert_eq!(pack_codes(&[-2], 8, 4), vec![0xe, 0xf]);
        assert_eq!(pack_partials(&[0x1234], 8, 4), vec![4, 3, 2, 1]);
        let v = [-32768i16, -1, 0, 1, 32767];
        assert_eq!(unpack_partials(&pack_partials(&v, 8, 4), 8, 4), v);
        let c: Vec<i8> = (-128..=127).collect();
        assert_eq!(unpack_codes(&pack_codes(&c, 8, 4), 8, 4), c);
        assert_eq!(unpack_codes(&pack_codes(&c, 8, 2), 8, 2), c);
    }

    #[test]
    fn always_ready_is_one_beat_per_cycle() {
        let mut l = link(ReadyModel::Always);
        let d = l.send(10, &[0xf, 0x0, 0x3], 1, 8).unwrap();
        assert_eq!(d.end_cycle, 13);
        assert_eq!(d.usage.bits_sent, 12);
        assert_eq!(d.usage.toggles, 4 + 4 + 2);
        assert_eq!(d.beats, vec![0xf, 0, 3]);
    }

    #[test]
    fn toggles_carry_across_transfers() {
        let mut l = link(ReadyModel::Always);
        l.send(0, &[0xf], 1, 8).unwrap();
        let d = l.send(1, &[0xf], 1, 8).unwrap();
        assert_eq!(d.usage.toggles, 0);
    }

    #[test]
    fn backpressure_stretches_transfer() {
        let mut l = link(ReadyModel::Periodic { period: 2, stall: 1 });
        let d = l.send(0, &[1, 2, 3, 4], 1, 8).unwrap();
        assert_eq!(d.end_cycle, 8);
        assert_eq!(d.usage.cycles_blocked, 4);
        assert_eq!(d.beats, vec![1, 2, 3, 4]);
    }

    #[test]
    fn never_ready_deadlocks_with_link_id() {
        let mut l = link(ReadyModel::Never);
        let e = l.send(0, &[1], 1, 16).unwrap_err();
        assert!(matches!(e, SimError::Deadlock { link: 7, .. }));
    }

    #[test]
    fn multicast_counts_each_receiver() {
        let plan = LinkPlan { id: 0, kind: LinkKind::Hidden, src: Endpoint::Die(0), dst: vec![Endpoint::Die(1), Endpoint::Die(2)] };
        let mut l = Link::new(&plan, 4, ReadyModel::Always);
        let d = l.send(0, &[1, 2], 2, 8).unwrap();
        assert_eq!(d.usage.bits_received, 2 * d.usage.bits_sent);
    }
}
