//! Bounded per-client cache with pluggable replacement.
//!
//! Policies:
//! - `Lru`: evict the least recently used entry, always admit.
//! - `TtlDrop` / `TtlRequery`: entries expire after their time-to-live and are
//!   dropped or flagged for requery by [`Cache::tick`]. Capacity pressure is
//!   resolved LRU.
//! - `Cqf`: rank by MTBU / MTBR. A newcomer must beat the current minimum.
//! - `Acqf`: rank by F_R * (P_NM - QoS). Same admission rule.
//!
//! Scores are computed lazily at decision points from the client's sliding
//! read window and the source statistics snapshot held in each entry.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::freshness::{self, FreshnessStats, QosMap};
use crate::ids::{ObjectId, Time};

pub const DEFAULT_READ_WINDOW: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CacheError {
    #[error("cache capacity must be at least 1")]
    ZeroCapacity,
    #[error("read window must hold at least 2 reads")]
    WindowTooSmall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Lru,
    TtlDrop,
    TtlRequery,
    Cqf,
    Acqf,
}

impl PolicyKind {
    fn is_scored(self) -> bool {
        matches!(self, PolicyKind::Cqf | PolicyKind::Acqf)
    }

    fn is_ttl(self) -> bool {
        matches!(self, PolicyKind::TtlDrop | PolicyKind::TtlRequery)
    }
}

/// A cached copy of an object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub object_id: ObjectId,
    pub payload: Vec<u8>,
    /// Source statistics as provided alongside the payload at fetch time.
    pub source_stats: Option<FreshnessStats>,
    /// Source version number of the payload.
    pub version: u64,
    /// Source write time of the payload version.
    pub written_at: Time,
    pub cached_at: Time,
    pub ttl: Option<f64>,
}

impl CacheEntry {
    pub fn p_not_modified(&self, now: Time) -> f64 {
        freshness::serve_probability(self.source_stats.as_ref(), now)
    }
}

/// Read statistics for one object over the client's read window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadStats {
    pub reads: usize,
    /// Mean time between reads. `None` with fewer than two reads in the window.
    pub mtbr: Option<f64>,
    /// This object's share of all reads in the window.
    pub f_r: f64,
}

impl ReadStats {
    pub const NEVER_READ: ReadStats = ReadStats {
        reads: 0,
        mtbr: None,
        f_r: 0.0,
    };
}

/// Sliding window over the last `capacity` reads issued by one client.
#[derive(Debug, Clone)]
pub struct ReadWindow {
    capacity: usize,
    reads: VecDeque<(ObjectId, Time)>,
}

impl ReadWindow {
    pub fn new(capacity: usize) -> Result<Self, CacheError> {
        if capacity < 2 {
            return Err(CacheError::WindowTooSmall);
        }
        Ok(Self {
            capacity,
            reads: VecDeque::with_capacity(capacity),
        })
    }

    pub fn record(&mut self, object: ObjectId, t: Time) {
        if self.reads.len() == self.capacity {
            self.reads.pop_front();
        }
        self.reads.push_back((object, t));
    }

    pub fn len(&self) -> usize {
        self.reads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reads.is_empty()
    }

    pub fn stats(&self, object: ObjectId) -> ReadStats {
        self.all_stats()
            .remove(&object)
            .unwrap_or(ReadStats::NEVER_READ)
    }

    /// Statistics for every object present in the window, in one pass.
    pub fn all_stats(&self) -> BTreeMap<ObjectId, ReadStats> {
        let mut acc: BTreeMap<ObjectId, (usize, Time, Time)> = BTreeMap::new();
        for &(o, t) in &self.reads {
            acc.entry(o)
                .and_modify(|(n, _, last)| {
                    *n += 1;
                    *last = t;
                })
                .or_insert((1, t, t));
        }
        let total = self.reads.len() as f64;
        acc.into_iter()
            .map(|(o, (n, first, last))| {
                let mtbr = (n >= 2 && last > first).then(|| (last - first) / (n - 1) as f64);
                (
                    o,
                    ReadStats {
                        reads: n,
                        mtbr,
                        f_r: n as f64 / total,
                    },
                )
            })
            .collect()
    }
}

/// Caching Quality Factor: MTBU / MTBR. Objects without a read interval or
/// without any recorded source interval score 0.
pub fn cqf(stats: Option<&FreshnessStats>, reads: &ReadStats) -> f64 {
    match (stats, reads.mtbr) {
        (Some(s), Some(mtbr)) if s.n_intervals >= 1 && mtbr > 0.0 => s.mtbu / mtbr,
        _ => 0.0,
    }
}

/// Alternative Caching Quality Factor: F_R * (P_NM - QoS).
pub fn acqf(f_r: f64, p_nm: f64, qos: f64) -> f64 {
    f_r * (p_nm - qos)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EvictionReport {
    pub admitted: bool,
    /// The incoming object replaced an older copy of itself.
    pub refreshed: bool,
    pub evicted: Option<ObjectId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickAction {
    Drop(ObjectId),
    Requery(ObjectId),
}

#[derive(Debug, Clone)]
struct Slot {
    entry: CacheEntry,
    last_access: u64,
}

#[derive(Debug, Clone)]
pub struct Cache {
    capacity: usize,
    policy: PolicyKind,
    default_ttl: Option<f64>,
    entries: BTreeMap<ObjectId, Slot>,
    reads: ReadWindow,
    clock: u64,
}

impl Cache {
    pub fn new(capacity: usize, policy: PolicyKind) -> Result<Self, CacheError> {
        Self::with_window(capacity, policy, DEFAULT_READ_WINDOW)
    }

    pub fn with_window(
        capacity: usize,
        policy: PolicyKind,
        read_window: usize,
    ) -> Result<Self, CacheError> {
        if capacity == 0 {
            return Err(CacheError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            policy,
            default_ttl: None,
            entries: BTreeMap::new(),
            reads: ReadWindow::new(read_window)?,
            clock: 0,
        })
    }

    /// TTL applied to entries inserted without their own.
    pub fn set_default_ttl(&mut self, ttl: Option<f64>) {
        self.default_ttl = ttl;
    }

    pub fn policy(&self) -> PolicyKind {
        self.policy
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, object: ObjectId) -> bool {
        self.entries.contains_key(&object)
    }

    pub fn peek(&self, object: ObjectId) -> Option<&CacheEntry> {
        self.entries.get(&object).map(|s| &s.entry)
    }

    /// Looks up an entry and marks it most recently used.
    pub fn get(&mut self, object: ObjectId) -> Option<&CacheEntry> {
        self.clock += 1;
        let clock = self.clock;
        self.entries.get_mut(&object).map(|s| {
            s.last_access = clock;
            &s.entry
        })
    }

    pub fn remove(&mut self, object: ObjectId) -> Option<CacheEntry> {
        self.entries.remove(&object).map(|s| s.entry)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.values().map(|s| &s.entry)
    }

    pub fn object_ids(&self) -> Vec<ObjectId> {
        self.entries.keys().copied().collect()
    }

    /// Records a read issued by this client, whether or not it hits.
    pub fn record_read(&mut self, object: ObjectId, t: Time) {
        self.reads.record(object, t);
    }

    pub fn read_window(&self) -> &ReadWindow {
        &self.reads
    }

    /// Replacement score of a (possibly not yet cached) entry under the
    /// cache's policy. Non-scored policies return 0.
    pub fn score(&self, entry: &CacheEntry, now: Time, qos: &QosMap) -> f64 {
        let reads = self.reads.stats(entry.object_id);
        self.score_with(entry, &reads, now, qos)
    }

    fn score_with(&self, entry: &CacheEntry, reads: &ReadStats, now: Time, qos: &QosMap) -> f64 {
        match self.policy {
            PolicyKind::Cqf => cqf(entry.source_stats.as_ref(), reads),
            PolicyKind::Acqf => acqf(
                reads.f_r,
                entry.p_not_modified(now),
                qos.get(entry.object_id).value(),
            ),
            _ => 0.0,
        }
    }

    /// Offers `entry` to the cache.
    ///
    /// When full, scored policies admit the newcomer only if its score is
    /// strictly greater than the current minimum, which is then evicted (ties
    /// among minima evict the oldest `cached_at`, then the lowest id).
    /// Other policies evict the least recently used entry.
    pub fn insert_with_eviction(
        &mut self,
        mut entry: CacheEntry,
        now: Time,
        qos: &QosMap,
    ) -> EvictionReport {
        if entry.ttl.is_none() {
            entry.ttl = self.default_ttl;
        }
        self.clock += 1;
        let clock = self.clock;
        let id = entry.object_id;

        if let Some(slot) = self.entries.get_mut(&id) {
            slot.entry = entry;
            slot.last_access = clock;
            return EvictionReport {
                admitted: true,
                refreshed: true,
                evicted: None,
            };
        }

        let mut report = EvictionReport {
            admitted: true,
            ..Default::default()
        };
        if self.entries.len() >= self.capacity {
            let victim = if self.policy.is_scored() {
                let reads = self.reads.all_stats();
                let read_of = |o: ObjectId| reads.get(&o).copied().unwrap_or(ReadStats::NEVER_READ);
                let incoming = self.score_with(&entry, &read_of(id), now, qos);
                let (victim, min_score) = self
                    .entries
                    .values()
                    .map(|s| {
                        let score = self.score_with(&s.entry, &read_of(s.entry.object_id), now, qos);
                        (s.entry.object_id, score, s.entry.cached_at)
                    })
                    .min_by(|a, b| {
                        a.1.total_cmp(&b.1)
                            .then(a.2.total_cmp(&b.2))
                            .then(a.0.cmp(&b.0))
                    })
                    .map(|(o, s, _)| (o, s))
                    .expect("full cache has entries");
                if incoming <= min_score {
                    return EvictionReport::default();
                }
                victim
            } else {
                self.entries
                    .iter()
                    .min_by_key(|(o, s)| (s.last_access, **o))
                    .map(|(o, _)| *o)
                    .expect("full cache has entries")
            };
            self.entries.remove(&victim);
            report.evicted = Some(victim);
        }
        debug_assert!(
            entry
                .source_stats
                .is_none_or(|s| entry.cached_at >= s.t_last_update),
            "copy cached before its source write"
        );
        self.entries.insert(
            id,
            Slot {
                entry,
                last_access: clock,
            },
        );
        report
    }

    /// Expires entries under the TTL policies. An entry expires when
    /// `now - cached_at > ttl`. `TtlDrop` removes it; `TtlRequery` keeps it
    /// and asks the owner to refetch.
    pub fn tick(&mut self, now: Time) -> Vec<TickAction> {
        if !self.policy.is_ttl() {
            return Vec::new();
        }
        let expired: Vec<ObjectId> = self
            .entries
            .values()
            .filter(|s| s.entry.ttl.is_some_and(|ttl| now - s.entry.cached_at > ttl))
            .map(|s| s.entry.object_id)
            .collect();
        match self.policy {
            PolicyKind::TtlDrop => expired
                .into_iter()
                .map(|o| {
                    self.entries.remove(&o);
                    TickAction::Drop(o)
                })
                .collect(),
            _ => expired.into_iter().map(TickAction::Requery).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freshness::QosSetting;

    fn entry(id: u32, mtbu: f64, cached_at: Time) -> CacheEntry {
        CacheEntry {
            object_id: ObjectId(id),
            payload: vec![],
            source_stats: Some(FreshnessStats {
                mtbu,
                stdv_mtbu: mtbu / 5.0,
                t_last_update: 0.0,
                n_intervals: 5,
            }),
            version: 1,
            written_at: 0.0,
            cached_at,
            ttl: None,
        }
    }

    /// Reads every object in `ids` at times 0, period, 2*period, ...
    fn read_periodically(cache: &mut Cache, ids: &[u32], period: f64) {
        for k in 0..4 {
            for &id in ids {
                cache.record_read(ObjectId(id), k as f64 * period);
            }
        }
    }

    #[test]
    fn cqf_ratio() {
        let s = entry(0, 200.0, 0.0).source_stats;
        let r = ReadStats {
            reads: 3,
            mtbr: Some(50.0),
            f_r: 0.1,
        };
        assert_eq!(cqf(s.as_ref(), &r), 4.0);
        let s = entry(0, 50.0, 0.0).source_stats;
        let r = ReadStats {
            mtbr: Some(200.0),
            ..r
        };
        assert_eq!(cqf(s.as_ref(), &r), 0.25);
        assert_eq!(cqf(s.as_ref(), &ReadStats::NEVER_READ), 0.0);
    }

    #[test]
    fn acqf_arithmetic() {
        assert!((acqf(0.2, 0.8, 0.3) - 0.10).abs() < 1e-12);
        assert!((acqf(0.5, 0.2, 0.9) + 0.35).abs() < 1e-12);
        assert_eq!(acqf(0.0, 0.1, 0.9), 0.0);
    }

    #[test]
    fn read_window_stats() {
        let mut w = ReadWindow::new(4).unwrap();
        w.record(ObjectId(1), 0.0);
        w.record(ObjectId(2), 1.0);
        w.record(ObjectId(1), 10.0);
        w.record(ObjectId(1), 20.0);
        let s = w.stats(ObjectId(1));
        assert_eq!(s.reads, 3);
        assert_eq!(s.mtbr, Some(10.0));
        assert!((s.f_r - 0.75).abs() < 1e-12);
        assert_eq!(w.stats(ObjectId(2)).mtbr, None);
        // window slides
        w.record(ObjectId(3), 30.0);
        assert_eq!(w.stats(ObjectId(1)).reads, 2);
        assert_eq!(w.stats(ObjectId(9)), ReadStats::NEVER_READ);
        let total: f64 = w.all_stats().values().map(|s| s.f_r).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_capacity_rejected() {
        assert_eq!(
            Cache::new(0, PolicyKind::Lru).unwrap_err(),
            CacheError::ZeroCapacity
        );
    }

    #[test]
    fn no_eviction_below_capacity() {
        let mut c = Cache::new(3, PolicyKind::Cqf).unwrap();
        let q = QosMap::default();
        for i in 0..3 {
            let r = c.insert_with_eviction(entry(i, 10.0, 0.0), 0.0, &q);
            assert!(r.admitted);
            assert_eq!(r.evicted, None);
        }
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn cqf_admits_higher_score() {
        let mut c = Cache::new(2, PolicyKind::Cqf).unwrap();
        let q = QosMap::default();
        read_periodically(&mut c, &[0, 1, 2], 50.0);
        // MTBR = 50 for all; CQF = mtbu / 50
        c.insert_with_eviction(entry(0, 100.0, 0.0), 0.0, &q); // 2.0
        c.insert_with_eviction(entry(1, 300.0, 0.0), 0.0, &q); // 6.0
        let r = c.insert_with_eviction(entry(2, 200.0, 1.0), 1.0, &q); // 4.0
        assert!(r.admitted);
        assert_eq!(r.evicted, Some(ObjectId(0)));
        assert!(c.contains(ObjectId(2)));
    }

    #[test]
    fn cqf_rejects_lower_score() {
        let mut c = Cache::new(1, PolicyKind::Cqf).unwrap();
        let q = QosMap::default();
        read_periodically(&mut c, &[0, 1], 50.0);
        c.insert_with_eviction(entry(0, 200.0, 0.0), 0.0, &q); // 4.0
        let r = c.insert_with_eviction(entry(1, 100.0, 1.0), 1.0, &q); // 2.0
        assert!(!r.admitted);
        assert_eq!(r.evicted, None);
        assert!(c.contains(ObjectId(0)));
        // equal score is not enough either
        let r = c.insert_with_eviction(entry(1, 200.0, 1.0), 1.0, &q);
        assert!(!r.admitted);
    }

    #[test]
    fn ties_evict_oldest_cached() {
        let mut c = Cache::new(2, PolicyKind::Cqf).unwrap();
        let q = QosMap::default();
        read_periodically(&mut c, &[0, 1, 2], 50.0);
        c.insert_with_eviction(entry(1, 100.0, 5.0), 5.0, &q);
        c.insert_with_eviction(entry(0, 100.0, 7.0), 7.0, &q);
        let r = c.insert_with_eviction(entry(2, 500.0, 8.0), 8.0, &q);
        assert_eq!(r.evicted, Some(ObjectId(1)));
    }

    #[test]
    fn acqf_evicts_qos_failures_first() {
        let mut c = Cache::new(2, PolicyKind::Acqf).unwrap();
        let q = QosMap::uniform(QosSetting::new(0.5).unwrap());
        read_periodically(&mut c, &[0, 1, 2], 10.0);
        // object 0: mtbu 1000, fresh at t=40; object 1: mtbu 10, stale at t=40
        c.insert_with_eviction(entry(0, 1000.0, 40.0), 40.0, &q);
        c.insert_with_eviction(entry(1, 10.0, 40.0), 40.0, &q);
        assert!(c.score(c.peek(ObjectId(1)).unwrap(), 40.0, &q) < 0.0);
        assert!(c.score(c.peek(ObjectId(0)).unwrap(), 40.0, &q) > 0.0);
        let r = c.insert_with_eviction(entry(2, 1000.0, 40.0), 40.0, &q);
        assert_eq!(r.evicted, Some(ObjectId(1)));
    }

    #[test]
    fn refresh_does_not_evict() {
        let mut c = Cache::new(1, PolicyKind::Lru).unwrap();
        let q = QosMap::default();
        c.insert_with_eviction(entry(0, 1.0, 0.0), 0.0, &q);
        let mut e = entry(0, 1.0, 3.0);
        e.version = 2;
        let r = c.insert_with_eviction(e, 3.0, &q);
        assert!(r.refreshed);
        assert_eq!(c.peek(ObjectId(0)).unwrap().version, 2);
    }

    #[test]
    fn ttl_drop_strict_boundary() {
        let mut c = Cache::new(4, PolicyKind::TtlDrop).unwrap();
        c.set_default_ttl(Some(50.0));
        c.insert_with_eviction(entry(0, 1.0, 0.0), 0.0, &QosMap::default());
        assert!(c.tick(50.0).is_empty());
        assert!(c.contains(ObjectId(0)));
        assert_eq!(c.tick(51.0), vec![TickAction::Drop(ObjectId(0))]);
        assert!(c.is_empty());
    }

    #[test]
    fn ttl_requery_keeps_entry() {
        let mut c = Cache::new(4, PolicyKind::TtlRequery).unwrap();
        let mut e = entry(0, 1.0, 0.0);
        e.ttl = Some(50.0);
        c.insert_with_eviction(e, 0.0, &QosMap::default());
        assert_eq!(c.tick(51.0), vec![TickAction::Requery(ObjectId(0))]);
        assert!(c.contains(ObjectId(0)));
    }

    #[test]
    fn tick_is_noop_for_other_policies() {
        let mut c = Cache::new(4, PolicyKind::Lru).unwrap();
        let mut e = entry(0, 1.0, 0.0);
        e.ttl = Some(1.0);
        c.insert_with_eviction(e, 0.0, &QosMap::default());
        assert!(c.tick(100.0).is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Textbook LRU: most recent at the back of a list.
        fn lru_oracle(capacity: usize, accesses: &[u32]) -> Vec<u32> {
            let mut list: VecDeque<u32> = VecDeque::new();
            for &a in accesses {
                if let Some(pos) = list.iter().position(|&x| x == a) {
                    list.remove(pos);
                } else if list.len() == capacity {
                    list.pop_front();
                }
                list.push_back(a);
            }
            let mut v: Vec<u32> = list.into_iter().collect();
            v.sort();
            v
        }

        proptest! {
            #[test]
            fn lru_matches_list_simulation(capacity in 1usize..6, accesses in proptest::collection::vec(0u32..10, 0..80)) {
                let mut c = Cache::new(capacity, PolicyKind::Lru).unwrap();
                let q = QosMap::default();
                for (t, &a) in accesses.iter().enumerate() {
                    if c.get(ObjectId(a)).is_none() {
                        c.insert_with_eviction(entry(a, 1.0, t as f64), t as f64, &q);
                    }
                    prop_assert!(c.len() <= capacity);
                }
                let got: Vec<u32> = c.object_ids().into_iter().map(|o| o.0).collect();
                prop_assert_eq!(got, lru_oracle(capacity, &accesses));
            }

            #[test]
            fn cqf_keeps_top_scores(capacity in 1usize..6, mtbus in proptest::collection::vec(1u32..10_000, 1..30)) {
                // distinct scores, static read statistics
                let mut mtbus = mtbus;
                mtbus.sort();
                mtbus.dedup();
                let mut c = Cache::new(capacity, PolicyKind::Cqf).unwrap();
                let ids: Vec<u32> = (0..mtbus.len() as u32).collect();
                read_periodically(&mut c, &ids, 10.0);
                let q = QosMap::default();
                // offer in an interleaved order
                let order: Vec<usize> = (0..mtbus.len()).map(|i| (i * 7) % mtbus.len()).collect();
                let mut seen = std::collections::BTreeSet::new();
                for &i in &order {
                    if !seen.insert(i) { continue; }
                    c.insert_with_eviction(entry(i as u32, mtbus[i] as f64, 50.0), 50.0, &q);
                    prop_assert!(c.len() <= capacity);
                }
                // replay oracle: top-capacity by score among everything offered
                let mut offered: Vec<(f64, u32)> = seen.iter().map(|&i| (mtbus[i] as f64 / 10.0, i as u32)).collect();
                offered.sort_by(|a, b| b.0.total_cmp(&a.0));
                let mut expected: Vec<u32> = offered.iter().take(capacity).map(|x| x.1).collect();
                expected.sort();
                let got: Vec<u32> = c.object_ids().into_iter().map(|o| o.0).collect();
                prop_assert_eq!(got, expected);
            }

            #[test]
            fn acqf_sign_tracks_qos_test(f_r in 0.001f64..=1.0, p_nm in 0.0f64..=1.0, qos in 0.0f64..=1.0) {
                let s = acqf(f_r, p_nm, qos);
                prop_assert!((-1.0..=1.0).contains(&s));
                prop_assert_eq!(s < 0.0, p_nm < qos);
            }
        }
    }
}
