//! Broadcast programs and air indexing.
//!
//! A program is one broadcast cycle per channel, all channels sharing the same
//! cycle length `L`. Published objects are dealt round-robin across channels
//! and index slots are injected per [`IndexScheme`]. Every index slot carries
//! the full directory, so a client that has read any index segment can locate
//! every object.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::ObjectId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("a program needs at least one channel")]
    NoChannels,
    #[error("a program needs at least one published object")]
    NoObjects,
    #[error("object {0} listed twice")]
    DuplicateObject(ObjectId),
    #[error("index replica count m must be at least 1")]
    InvalidReplicaCount,
    #[error("index segments must occupy at least one slot")]
    InvalidIndexSize,
    #[error("a dedicated index channel needs at least two channels")]
    DedicatedNeedsTwoChannels,
    #[error("scheme has no aggregate index")]
    NotApplicable,
    #[error("object {0} is not in the broadcast")]
    NotBroadcast(ObjectId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IndexScheme {
    None,
    /// One index slot immediately before every data slot.
    Distributed,
    /// One aggregate index at the start of the cycle.
    OncePerCycle,
    /// `m` equally spaced replicas of the aggregate index.
    OneM { m: u32 },
}

impl IndexScheme {
    fn has_aggregate_index(self) -> bool {
        matches!(self, IndexScheme::OncePerCycle | IndexScheme::OneM { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Slot {
    Data(ObjectId),
    /// Part of index segment `n` (segments are numbered per cycle).
    Index(u32),
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProgramOptions {
    /// Duration of one slot in time units (S / B_b for a planned cell).
    pub slot_duration: f64,
    /// Slots occupied by one aggregate index segment.
    pub index_slots: u32,
    /// Channel 0 carries only index segments; data uses the others.
    pub dedicated_index_channel: bool,
}

impl Default for ProgramOptions {
    fn default() -> Self {
        Self {
            slot_duration: 1.0,
            index_slots: 1,
            dedicated_index_channel: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectoryEntry {
    pub object_id: ObjectId,
    pub channel: u32,
    /// Absolute slot number of the occurrence.
    pub slot: u64,
    /// Cycle number containing `slot`.
    pub valid_for_cycle: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastProgram {
    pub scheme: IndexScheme,
    pub options: ProgramOptions,
    pub channels: Vec<Vec<Slot>>,
    pub cycle_len: u32,
    /// object -> (channel, slot within cycle)
    pub directory: BTreeMap<ObjectId, (u32, u32)>,
}

/// Positions of data and index slots within one cycle, before filling.
fn template(data_slots: usize, scheme: IndexScheme, index_slots: u32) -> Vec<Slot> {
    let mut t = Vec::new();
    let idx = |t: &mut Vec<Slot>, seg: u32| t.extend(std::iter::repeat_n(Slot::Index(seg), index_slots as usize));
    let data = |t: &mut Vec<Slot>, n: usize| t.extend(std::iter::repeat_n(Slot::Empty, n));
    match scheme {
        IndexScheme::None => data(&mut t, data_slots),
        IndexScheme::Distributed => {
            for i in 0..data_slots {
                t.push(Slot::Index(i as u32));
                t.push(Slot::Empty);
            }
        }
        IndexScheme::OncePerCycle => {
            idx(&mut t, 0);
            data(&mut t, data_slots);
        }
        IndexScheme::OneM { m } => {
            let m = m as usize;
            for j in 0..m {
                idx(&mut t, j as u32);
                let group = (j + 1) * data_slots / m - j * data_slots / m;
                data(&mut t, group);
            }
        }
    }
    t
}

/// Lays out `published` (in order) over `channels` channels.
pub fn build_program(
    published: &[ObjectId],
    channels: u32,
    scheme: IndexScheme,
    options: ProgramOptions,
) -> Result<BroadcastProgram, ScheduleError> {
    if channels == 0 {
        return Err(ScheduleError::NoChannels);
    }
    if published.is_empty() {
        return Err(ScheduleError::NoObjects);
    }
    if let IndexScheme::OneM { m: 0 } = scheme {
        return Err(ScheduleError::InvalidReplicaCount);
    }
    if options.index_slots == 0 {
        return Err(ScheduleError::InvalidIndexSize);
    }
    if options.dedicated_index_channel && channels < 2 {
        return Err(ScheduleError::DedicatedNeedsTwoChannels);
    }
    let mut seen = std::collections::BTreeSet::new();
    for &o in published {
        if !seen.insert(o) {
            return Err(ScheduleError::DuplicateObject(o));
        }
    }

    let first_data = u32::from(options.dedicated_index_channel);
    let data_channels = (channels - first_data) as usize;
    let mut per_channel: Vec<Vec<ObjectId>> = vec![Vec::new(); data_channels];
    for (i, &o) in published.iter().enumerate() {
        per_channel[i % data_channels].push(o);
    }
    let d_max = per_channel.iter().map(Vec::len).max().unwrap_or(0);
    let data_scheme = if options.dedicated_index_channel {
        IndexScheme::None
    } else {
        scheme
    };
    let tmpl = template(d_max, data_scheme, options.index_slots);
    let cycle_len = tmpl.len() as u32;

    let mut out = Vec::with_capacity(channels as usize);
    if options.dedicated_index_channel {
        out.push(
            (0..cycle_len)
                .map(|s| Slot::Index(s / options.index_slots))
                .collect(),
        );
    }
    let mut directory = BTreeMap::new();
    for (c, objs) in per_channel.iter().enumerate() {
        let ch = c as u32 + first_data;
        let mut next = objs.iter();
        let slots: Vec<Slot> = tmpl
            .iter()
            .enumerate()
            .map(|(pos, s)| match s {
                Slot::Empty => match next.next() {
                    Some(&o) => {
                        directory.insert(o, (ch, pos as u32));
                        Slot::Data(o)
                    }
                    None => Slot::Empty,
                },
                other => *other,
            })
            .collect();
        out.push(slots);
    }
    let program = BroadcastProgram {
        scheme,
        options,
        channels: out,
        cycle_len,
        directory,
    };
    debug_assert!(program.check().is_ok(), "{:?}", program.check());
    Ok(program)
}

impl BroadcastProgram {
    pub fn channel_count(&self) -> u32 {
        self.channels.len() as u32
    }

    pub fn object_count(&self) -> usize {
        self.directory.len()
    }

    pub fn contains(&self, object: ObjectId) -> bool {
        self.directory.contains_key(&object)
    }

    pub fn position(&self, object: ObjectId) -> Result<(u32, u32), ScheduleError> {
        self.directory
            .get(&object)
            .copied()
            .ok_or(ScheduleError::NotBroadcast(object))
    }

    /// Channel on which clients read the index.
    pub fn index_channel(&self) -> u32 {
        0
    }

    /// Start positions of index segments on the index channel. For the
    /// distributed scheme every index slot is a segment.
    pub fn index_starts(&self) -> Vec<u32> {
        let ch = &self.channels[self.index_channel() as usize];
        let mut starts = Vec::new();
        let mut prev: Option<Slot> = None;
        for (pos, s) in ch.iter().enumerate() {
            if let Slot::Index(_) = s {
                let continues = matches!((prev, s), (Some(Slot::Index(a)), Slot::Index(b)) if a == *b);
                if !continues || self.scheme == IndexScheme::Distributed {
                    starts.push(pos as u32);
                }
            }
            prev = Some(*s);
        }
        starts
    }

    /// Index segments per cycle on the index channel.
    pub fn index_replicas(&self) -> u32 {
        self.index_starts().len() as u32
    }

    pub fn index_slots_per_cycle(&self) -> u32 {
        self.channels[self.index_channel() as usize]
            .iter()
            .filter(|s| matches!(s, Slot::Index(_)))
            .count() as u32
    }

    /// Structural invariants: equal cycle lengths, each object exactly once,
    /// directory consistent with the slots.
    pub fn check(&self) -> Result<(), String> {
        let mut count: BTreeMap<ObjectId, usize> = BTreeMap::new();
        for (c, ch) in self.channels.iter().enumerate() {
            if ch.len() != self.cycle_len as usize {
                return Err(format!("channel {c} has length {}", ch.len()));
            }
            for (pos, s) in ch.iter().enumerate() {
                if let Slot::Data(o) = s {
                    *count.entry(*o).or_default() += 1;
                    if self.directory.get(o) != Some(&(c as u32, pos as u32)) {
                        return Err(format!("directory disagrees for object {o}"));
                    }
                }
            }
        }
        if count.len() != self.directory.len() || count.values().any(|&n| n != 1) {
            return Err("object multiplicity is not one per cycle".into());
        }
        Ok(())
    }

    /// Next occurrence of `object` strictly after the slot in which the index
    /// read completed, wrapping into later cycles.
    pub fn locate(&self, index_read_slot: u64, object: ObjectId) -> Result<DirectoryEntry, ScheduleError> {
        let (channel, pos) = self.position(object)?;
        let l = self.cycle_len as u64;
        let mut cycle = index_read_slot / l;
        if cycle * l + pos as u64 <= index_read_slot {
            cycle += 1;
        }
        Ok(DirectoryEntry {
            object_id: object,
            channel,
            slot: cycle * l + pos as u64,
            valid_for_cycle: cycle,
        })
    }

    /// First index segment starting at or after absolute slot `from`.
    /// Returns `(start_slot, last_slot)` of that segment.
    pub fn next_index_segment(&self, from: u64) -> Option<(u64, u64)> {
        let starts = self.index_starts();
        let l = self.cycle_len as u64;
        let seg_len = match self.scheme {
            IndexScheme::Distributed if !self.options.dedicated_index_channel => 1,
            _ => self.options.index_slots as u64,
        };
        let base = from / l * l;
        starts
            .iter()
            .map(|&p| base + p as u64)
            .chain(starts.iter().map(|&p| base + l + p as u64))
            .find(|&s| s >= from)
            .map(|s| (s, s + seg_len - 1))
    }

    /// Expected wait for the next aggregate index from a random instant,
    /// `L / (2m)` slots.
    pub fn expected_index_wait(&self) -> Result<f64, ScheduleError> {
        if !self.scheme.has_aggregate_index() && !self.options.dedicated_index_channel {
            return Err(ScheduleError::NotApplicable);
        }
        Ok(self.cycle_len as f64 / (2.0 * self.index_replicas() as f64))
    }

    /// Slots from continuous position `start` (in slots) until the next index
    /// segment begins.
    pub fn time_to_next_index(&self, start: f64) -> Option<f64> {
        let l = self.cycle_len as f64;
        let phase = start.rem_euclid(l);
        self.index_starts()
            .iter()
            .map(|&p| (p as f64 - phase).rem_euclid(l))
            .min_by(f64::total_cmp)
    }

    /// Slots from continuous position `start` until `object`'s slot begins.
    pub fn time_to_object(&self, start: f64, object: ObjectId) -> Result<f64, ScheduleError> {
        let (_, pos) = self.position(object)?;
        let l = self.cycle_len as f64;
        Ok((pos as f64 - start.rem_euclid(l)).rem_euclid(l))
    }

    /// Plain-text slot table, one row per (channel, slot).
    pub fn dump_table(&self) -> String {
        let mut s = String::from("channel,slot,kind,value\n");
        for (c, ch) in self.channels.iter().enumerate() {
            for (pos, slot) in ch.iter().enumerate() {
                let (kind, value) = match slot {
                    Slot::Data(o) => ("data", o.0.to_string()),
                    Slot::Index(n) => ("index", n.to_string()),
                    Slot::Empty => ("empty", String::new()),
                };
                let _ = writeln!(s, "{c},{pos},{kind},{value}");
            }
        }
        s
    }
}
