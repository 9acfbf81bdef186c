//! Multi-object retrieval from a multi-channel broadcast program.
//!
//! A client that has read the directory can listen to one channel at a time.
//! An object at absolute slot `a` occupies `[a, a + 1)`; the next retrieval on
//! the same channel may start at `a + 1`, on another channel at `a + 1 + σ`.
//! Tuning to the first channel is free.

use std::collections::BTreeSet;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::air_schedule::BroadcastProgram;
use crate::ids::ObjectId;

/// Largest instance the exhaustive planner accepts.
pub const BRUTE_FORCE_LIMIT: usize = 8;
/// Cap on 2-opt candidate evaluations.
pub const TWO_OPT_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("no desired objects")]
    Empty,
    #[error("object {0} is not in the broadcast")]
    NotBroadcast(ObjectId),
    #[error("exhaustive search refused for {0} objects")]
    RefusedSize(usize),
    #[error("invalid cost model: {0}")]
    InvalidCost(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub switch_slots: u64,
    pub e_active: f64,
    pub e_doze: f64,
    pub e_switch: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            switch_slots: 1,
            e_active: 1.0,
            e_doze: 0.05,
            e_switch: 0.5,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.switch_slots < 1 {
            return Err(RetrievalError::InvalidCost("switch_slots must be at least 1"));
        }
        if !(self.e_active >= 0.0 && self.e_doze >= 0.0 && self.e_switch >= 0.0) {
            return Err(RetrievalError::InvalidCost("energies must be non-negative"));
        }
        if self.e_doze >= self.e_active {
            return Err(RetrievalError::InvalidCost("e_doze must be below e_active"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelOrder {
    #[default]
    Ascending,
    EarliestFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub object_id: ObjectId,
    pub channel: u32,
    pub slot: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalPlan {
    pub entries: Vec<PlanEntry>,
    pub start_slot: u64,
    pub total_slots: u64,
    pub switches: u64,
    pub active_slots: u64,
}

impl RetrievalPlan {
    fn cost_key(&self) -> (u64, u64) {
        (self.total_slots, self.switches)
    }

    pub fn order(&self) -> Vec<ObjectId> {
        self.entries.iter().map(|e| e.object_id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub response_slots: u64,
    pub doze_slots: u64,
    pub energy: f64,
}

pub fn account(plan: &RetrievalPlan, cost: &CostModel) -> Accounting {
    let doze = plan.total_slots - plan.active_slots - cost.switch_slots * plan.switches;
    Accounting {
        response_slots: plan.total_slots,
        doze_slots: doze,
        energy: plan.active_slots as f64 * cost.e_active
            + doze as f64 * cost.e_doze
            + plan.switches as f64 * cost.e_switch,
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalRequest<'a> {
    pub program: &'a BroadcastProgram,
    /// Sorted, deduplicated.
    pub desired: Vec<ObjectId>,
    /// First slot the client may listen to.
    pub start: u64,
}

impl<'a> RetrievalRequest<'a> {
    pub fn new(
        program: &'a BroadcastProgram,
        desired: impl IntoIterator<Item = ObjectId>,
        start: u64,
    ) -> Result<Self, RetrievalError> {
        let desired: Vec<ObjectId> = desired.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if desired.is_empty() {
            return Err(RetrievalError::Empty);
        }
        if let Some(&o) = desired.iter().find(|o| !program.contains(**o)) {
            return Err(RetrievalError::NotBroadcast(o));
        }
        Ok(Self {
            program,
            desired,
            start,
        })
    }

    fn pos(&self, o: ObjectId) -> (u32, u32) {
        self.program.directory[&o]
    }

    /// First absolute slot `>= from` at which `o` airs.
    fn next_at_or_after(&self, o: ObjectId, from: u64) -> u64 {
        let (_, p) = self.pos(o);
        let l = self.program.cycle_len as u64;
        let base = from / l * l + p as u64;
        if base >= from {
            base
        } else {
            base + l
        }
    }
}

/// Listening state between retrievals.
#[derive(Debug, Clone, Copy)]
struct Cursor {
    channel: Option<u32>,
    last: Option<u64>,
}

impl Cursor {
    fn earliest(&self, req: &RetrievalRequest, cost: &CostModel, channel: u32) -> u64 {
        match (self.channel, self.last) {
            (Some(c), Some(a)) if c == channel => a + 1,
            (Some(_), Some(a)) => a + 1 + cost.switch_slots,
            _ => req.start,
        }
    }

    fn take(&mut self, req: &RetrievalRequest, cost: &CostModel, o: ObjectId) -> PlanEntry {
        let (ch, _) = req.pos(o);
        let slot = req.next_at_or_after(o, self.earliest(req, cost, ch));
        self.channel = Some(ch);
        self.last = Some(slot);
        PlanEntry {
            object_id: o,
            channel: ch,
            slot,
        }
    }
}

fn finish(req: &RetrievalRequest, entries: Vec<PlanEntry>) -> RetrievalPlan {
    let last = entries.last().map_or(req.start, |e| e.slot + 1);
    let switches = entries.windows(2).filter(|w| w[0].channel != w[1].channel).count() as u64;
    RetrievalPlan {
        active_slots: entries.len() as u64,
        entries,
        start_slot: req.start,
        total_slots: last - req.start,
        switches,
    }
}

/// Executes a fixed retrieval order, taking each object at its earliest
/// feasible slot.
pub fn execute_order(req: &RetrievalRequest, cost: &CostModel, order: &[ObjectId]) -> RetrievalPlan {
    let mut cur = Cursor {
        channel: None,
        last: None,
    };
    let entries = order.iter().map(|&o| cur.take(req, cost, o)).collect();
    finish(req, entries)
}

pub fn row_scan(req: &RetrievalRequest, cost: &CostModel, order: ChannelOrder) -> RetrievalPlan {
    let mut remaining: BTreeSet<u32> = req.desired.iter().map(|&o| req.pos(o).0).collect();
    let mut cur = Cursor {
        channel: None,
        last: None,
    };
    let mut entries = Vec::with_capacity(req.desired.len());
    while !remaining.is_empty() {
        let first_on = |ch: u32, cur: &Cursor| {
            let from = cur.earliest(req, cost, ch);
            req.desired
                .iter()
                .filter(|&&o| req.pos(o).0 == ch)
                .map(|&o| req.next_at_or_after(o, from))
                .min()
                .unwrap_or(u64::MAX)
        };
        let ch = match order {
            ChannelOrder::Ascending => *remaining.first().unwrap(),
            ChannelOrder::EarliestFirst => *remaining.iter().min_by_key(|&&c| (first_on(c, &cur), c)).unwrap(),
        };
        remaining.remove(&ch);
        let from = cur.earliest(req, cost, ch);
        let mut on_ch: Vec<ObjectId> = req.desired.iter().copied().filter(|&o| req.pos(o).0 == ch).collect();
        on_ch.sort_by_key(|&o| (req.next_at_or_after(o, from), o));
        for o in on_ch {
            entries.push(cur.take(req, cost, o));
        }
    }
    finish(req, entries)
}

/// Greedy: repeatedly take the remaining object with the earliest feasible
/// slot (ties to the lower id).
pub fn next_object_access(req: &RetrievalRequest, cost: &CostModel) -> RetrievalPlan {
    let mut remaining: Vec<ObjectId> = req.desired.clone();
    let mut cur = Cursor {
        channel: None,
        last: None,
    };
    let mut entries = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let (i, _) = remaining
            .iter()
            .enumerate()
            .min_by_key(|(_, &o)| {
                let ch = req.pos(o).0;
                (req.next_at_or_after(o, cur.earliest(req, cost, ch)), o)
            })
            .unwrap();
        let o = remaining.remove(i);
        entries.push(cur.take(req, cost, o));
    }
    finish(req, entries)
}

/// Nearest-neighbor order refined by 2-opt segment reversal.
pub fn tsp_order(req: &RetrievalRequest, cost: &CostModel) -> RetrievalPlan {
    let mut best = next_object_access(req, cost);
    let mut order = best.order();
    let n = order.len();
    let mut evaluations = 0;
    'outer: loop {
        let mut improved = false;
        for i in 0..n.saturating_sub(1) {
            for j in i + 1..n {
                if evaluations >= TWO_OPT_CAP {
                    break 'outer;
                }
                evaluations += 1;
                order[i..=j].reverse();
                let cand = execute_order(req, cost, &order);
                if cand.cost_key() < best.cost_key() {
                    best = cand;
                    improved = true;
                } else {
                    order[i..=j].reverse();
                }
            }
        }
        if !improved {
            break;
        }
    }
    best
}

/// Exhaustive search over all orders; minimal response slots, then fewest
/// switches, then lexicographically smallest order.
pub fn brute_force(req: &RetrievalRequest, cost: &CostModel) -> Result<RetrievalPlan, RetrievalError> {
    let n = req.desired.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(RetrievalError::RefusedSize(n));
    }
    let mut best: Option<RetrievalPlan> = None;
    for perm in req.desired.iter().copied().permutations(n) {
        let plan = execute_order(req, cost, &perm);
        if best.as_ref().is_none_or(|b| plan.cost_key() < b.cost_key()) {
            best = Some(plan);
        }
    }
    Ok(best.expect("nonempty request"))
}
