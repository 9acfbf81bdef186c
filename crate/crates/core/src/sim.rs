//! Deterministic slot-based simulator.
//!
//! One time unit is one slot. Source updates, the request workload and the
//! fidelity limits each draw from their own ChaCha stream derived from the
//! scenario seed, so switching a subsystem off does not shift the others.
//!
//! Requests are resolved in arrival order along the chain local cache, local
//! provider, broadcast (for published objects), one-hop neighbors, and the
//! source through the batching on-demand server.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::air_schedule::{build_program, BroadcastProgram, ProgramOptions, ScheduleError};
use crate::broadcast_plan::{
    partition_objects, BatchingServer, ObjectDemand, PartitionReport, PendingRequest, PlanError, PlanParams,
};
use crate::cache::{Cache, CacheError, TickAction};
use crate::fidelity::{self, Config, Supplier};
use crate::freshness::{self, FreshnessStats, QosMap, QosSetting, UpdateLog};
use crate::ids::{ClientId, ObjectId, Time};
use crate::p2p::{InformationManager, Network, P2pConfig, P2pError, QueryOutcome, Resolution, SourceRecord, SourceView};
use crate::scenario::{Adjacency, Scenario};

const STREAM_WORKLOAD: u64 = 1 << 32;
const STREAM_UPDATES: u64 = 2 << 32;
const STREAM_FIDELITY: u64 = 3 << 32;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    P2p(#[from] P2pError),
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

// ---------------------------------------------------------------------------
// Workload
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub time: Time,
    pub client: ClientId,
    pub object: ObjectId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    /// Ordered by time, then client.
    pub requests: Vec<Request>,
}

/// Popularity of object `i` (0-based) under Zipf(θ) over `n` objects.
pub fn zipf_probabilities(n: u32, theta: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-theta)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Poisson arrivals per client with Zipf popularity.
pub fn generate_workload(s: &Scenario) -> Workload {
    let rate = s.workload.request_rate;
    let duration = s.duration_slots as f64;
    if rate == 0.0 || s.duration_slots == 0 {
        return Workload::default();
    }
    let exp = Exp::new(rate).expect("validated rate");
    let zipf = Zipf::new(s.objects.count as f64, s.workload.zipf_theta).expect("validated zipf");
    let mut requests = Vec::new();
    for c in 0..s.clients.count {
        let mut rng = stream(s.seed, STREAM_WORKLOAD | c as u64);
        let mut t = 0.0;
        loop {
            t += exp.sample(&mut rng);
            if t >= duration {
                break;
            }
            let rank = zipf.sample(&mut rng) as u32;
            requests.push(Request {
                time: t,
                client: ClientId(c),
                object: ObjectId(rank - 1),
            });
        }
    }
    requests.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.client.cmp(&b.client)));
    Workload { requests }
}

// ---------------------------------------------------------------------------
// Sources
// ---------------------------------------------------------------------------

/// Update history of one object, extended lazily from its own stream.
#[derive(Debug, Clone)]
struct ObjectSource {
    rng: ChaCha8Rng,
    interval: Option<Normal<f64>>,
    mean: f64,
    log: UpdateLog,
    stats: Vec<Option<FreshnessStats>>,
}

impl ObjectSource {
    fn new(seed: u64, id: u32, mean: f64, stdv: f64, history: u32) -> Self {
        let mut s = Self {
            rng: stream(seed, STREAM_UPDATES | id as u64),
            interval: (stdv > 0.0).then(|| Normal::new(mean, stdv).expect("validated update process")),
            mean,
            log: UpdateLog::new(),
            stats: Vec::new(),
        };
        // history laid out backwards from a random phase before time 0
        let mut back = Vec::with_capacity(history as usize);
        let mut t = -s.rng.random::<f64>() * s.draw();
        back.push(t);
        for _ in 1..history {
            t -= s.draw();
            back.push(t);
        }
        for t in back.into_iter().rev() {
            s.push(t);
        }
        s
    }

    fn draw(&mut self) -> f64 {
        match &self.interval {
            None => self.mean,
            Some(n) => loop {
                let x = n.sample(&mut self.rng);
                if x > 0.0 {
                    break x;
                }
            },
        }
    }

    fn push(&mut self, t: Time) {
        self.log.record_update(t).expect("update times increase");
        self.stats.push(self.log.stats());
    }

    fn ensure(&mut self, until: Time) {
        while self.log.last_update().expect("history") <= until {
            let next = self.log.last_update().expect("history") + self.draw();
            self.push(next);
        }
    }

    fn times(&self) -> &[Time] {
        self.log.update_times()
    }

    /// Version current at `t` (the last update at or before `t`).
    fn version_at(&self, t: Time) -> usize {
        self.times().partition_point(|&u| u <= t) - 1
    }

    fn record(&self, version: usize) -> SourceRecord {
        SourceRecord {
            version: version as u64,
            written_at: self.times()[version],
            stats: self.stats[version],
            payload: (version as u64).to_le_bytes().to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
struct Sources {
    objects: Vec<ObjectSource>,
}

impl Sources {
    fn new(s: &Scenario) -> Self {
        let o = &s.objects;
        let overrides: BTreeMap<u32, _> = o.overrides.iter().map(|ov| (ov.id, ov)).collect();
        let objects = (0..o.count)
            .map(|id| {
                let ov = overrides.get(&id);
                let mean = ov.and_then(|v| v.mean_update).unwrap_or(o.mean_update);
                let stdv = ov.and_then(|v| v.stdv_update).unwrap_or(o.stdv_update);
                ObjectSource::new(s.seed, id, mean, stdv, o.history_updates)
            })
            .collect();
        Self { objects }
    }

    fn ensure(&mut self, o: ObjectId, until: Time) {
        self.objects[o.0 as usize].ensure(until);
    }

    fn at(&self, t: Time) -> SourcesAt<'_> {
        SourcesAt { sources: self, t }
    }

    /// Time since `version` was superseded, as of `t`.
    fn staleness(&self, o: ObjectId, version: u64, t: Time) -> f64 {
        match self.objects[o.0 as usize].times().get(version as usize + 1) {
            Some(&next) if next <= t => t - next,
            _ => 0.0,
        }
    }
}

struct SourcesAt<'a> {
    sources: &'a Sources,
    t: Time,
}

impl SourceView for SourcesAt<'_> {
    fn current(&self, object: ObjectId) -> Option<SourceRecord> {
        let src = self.sources.objects.get(object.0 as usize)?;
        Some(src.record(src.version_at(self.t)))
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: u64,
    pub client_id: u32,
    pub object_id: u32,
    pub time: f64,
    pub resolution: Resolution,
    pub latency_slots: f64,
    pub staleness_slots: f64,
    pub qos: f64,
    pub qos_met: bool,
    pub p_nm: f64,
    pub version: u64,
    pub written_at: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub client_id: u32,
    pub queries: u64,
    pub energy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSummary {
    /// Slots aired across all broadcast channels.
    pub broadcast_slots: u64,
    pub on_demand_requests: u64,
    pub on_demand_responses: u64,
    pub saved_by_batching: u64,
    pub ttl_requeries: u64,
    pub neighbor_queries: u64,
    pub advertisements: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub at: f64,
    pub k: usize,
    pub b_b: f64,
    pub b_d: f64,
    pub normalized_access: Option<f64>,
    pub feasible: bool,
    pub cycle_len: Option<u32>,
    pub slot_duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityOutcome {
    pub client_id: u32,
    pub limits: BTreeMap<String, f64>,
    pub supplier_id: Option<String>,
    pub config: Option<Config>,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_id: String,
    pub seed: u64,
    pub duration_slots: u64,
    pub issued: u64,
    pub answered: u64,
    pub unresolved: u64,
    pub queries: Vec<QueryRecord>,
    pub clients: Vec<ClientSummary>,
    pub bandwidth: BandwidthSummary,
    pub plans: Vec<PlanSummary>,
    pub fidelity: Vec<FidelityOutcome>,
}

impl Metrics {
    pub fn count(&self, r: Resolution) -> u64 {
        self.queries.iter().filter(|q| q.resolution == r).count() as u64
    }

    /// Queries answered by the data source.
    pub fn source_load(&self) -> u64 {
        self.count(Resolution::Source)
    }

    /// Served copies that failed their own QoS test.
    pub fn qos_violations(&self) -> u64 {
        self.queries.iter().filter(|q| !q.qos_met).count() as u64
    }

    /// Flat per-run metrics used for sweeps and comparisons.
    pub fn summary(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let n = self.queries.len().max(1) as f64;
        let mean = |f: fn(&QueryRecord) -> f64| self.queries.iter().map(f).sum::<f64>() / n;
        m.insert("issued".into(), self.issued as f64);
        m.insert("answered".into(), self.answered as f64);
        m.insert("unresolved".into(), self.unresolved as f64);
        m.insert("source_load".into(), self.source_load() as f64);
        m.insert("qos_violations".into(), self.qos_violations() as f64);
        m.insert("mean_latency_slots".into(), mean(|q| q.latency_slots));
        m.insert("mean_staleness_slots".into(), mean(|q| q.staleness_slots));
        m.insert("total_energy".into(), self.clients.iter().map(|c| c.energy).sum());
        for r in [
            Resolution::LocalCache,
            Resolution::LocalProvider,
            Resolution::NeighborCache,
            Resolution::NeighborProvider,
            Resolution::Broadcast,
            Resolution::Source,
        ] {
            m.insert(format!("resolved_{}", r.as_str()), self.count(r) as f64);
        }
        let b = &self.bandwidth;
        m.insert("broadcast_slots".into(), b.broadcast_slots as f64);
        m.insert("on_demand_requests".into(), b.on_demand_requests as f64);
        m.insert("on_demand_responses".into(), b.on_demand_responses as f64);
        m.insert("saved_by_batching".into(), b.saved_by_batching as f64);
        m.insert("ttl_requeries".into(), b.ttl_requeries as f64);
        if !self.fidelity.is_empty() {
            let u: f64 = self.fidelity.iter().map(|f| f.utility).sum();
            m.insert("mean_fidelity_utility".into(), u / self.fidelity.len() as f64);
        }
        m
    }

    pub const CSV_HEADER: &'static str = "query_id,client_id,object_id,resolution,latency_slots,staleness_slots,qos,qos_met";

    /// Per-query rows followed by `summary,<metric>,<value>` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(Self::CSV_HEADER);
        s.push('\n');
        for q in &self.queries {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                q.query_id,
                q.client_id,
                q.object_id,
                q.resolution.as_str(),
                q.latency_slots,
                q.staleness_slots,
                q.qos,
                q.qos_met
            );
        }
        for (k, v) in self.summary() {
            let _ = writeln!(s, "summary,{k},{v},,,,,");
        }
        for c in &self.clients {
            let _ = writeln!(s, "summary,energy_client_{},{},,,,,", c.client_id, c.energy);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

struct Epoch {
    start: Time,
    program: Option<BroadcastProgram>,
}

impl Epoch {
    fn slot_duration(&self) -> f64 {
        self.program.as_ref().map_or(1.0, |p| p.options.slot_duration)
    }

    fn aired_slots(&self, end: Time) -> u64 {
        match &self.program {
            Some(p) => ((end - self.start) / p.options.slot_duration).floor() as u64 * p.channel_count() as u64,
            None => 0,
        }
    }
}

/// Result of tuning in for one published object.
struct AirFetch {
    air_slot: u64,
    serve_time: Time,
    active: u64,
    doze: u64,
}

fn air_fetch(epoch: &Epoch, program: &BroadcastProgram, o: ObjectId, t: Time, switch_slots: u64) -> AirFetch {
    let delta = program.options.slot_duration;
    let l = program.cycle_len as u64;
    let s0 = ((t - epoch.start) / delta).ceil().max(0.0) as u64;
    let (channel, pos) = program.position(o).expect("published object");
    let first_at_or_after = |from: u64| {
        let base = from / l * l + pos as u64;
        if base >= from {
            base
        } else {
            base + l
        }
    };
    let (air_slot, active) = match program.next_index_segment(s0) {
        None => {
            // no index: listen until the object comes by
            let a = first_at_or_after(s0);
            (a, a - s0 + 1)
        }
        Some((is, ie)) => {
            let probe = u64::from(is > s0);
            let read_end = if channel == program.index_channel() { ie } else { ie + switch_slots };
            let a = program.locate(read_end, o).expect("published object").slot;
            (a, probe + (ie - is + 1) + 1)
        }
    };
    let span = air_slot + 1 - s0;
    AirFetch {
        air_slot,
        serve_time: epoch.start + (air_slot + 1) as f64 * delta,
        active,
        doze: span.saturating_sub(active),
    }
}

fn build_network(s: &Scenario) -> Result<Network, SimError> {
    let c = &s.clients;
    let mut qos = QosMap::uniform(QosSetting::new(c.qos).expect("validated qos"));
    for (k, q) in &c.qos_per_object {
        let id: u32 = k.parse().expect("validated object key");
        qos.per_object.insert(ObjectId(id), QosSetting::new(*q).expect("validated qos"));
    }
    let mut managers = Vec::with_capacity(c.count as usize);
    for i in 0..c.count {
        let mut cache = Cache::new(c.cache_capacity, c.policy)?;
        cache.set_default_ttl(c.ttl);
        managers.push(InformationManager::new(ClientId(i), Some(cache), qos.clone()));
    }
    let config = P2pConfig {
        p2p_enabled: s.toggles.p2p,
        caching_enabled: s.toggles.caching,
        overhearing: s.toggles.overhearing,
        latency: s.latency,
    };
    let mut net = Network::new(managers, config);
    let n = c.count;
    let mut adj: Vec<BTreeSet<ClientId>> = vec![BTreeSet::new(); n as usize];
    match &c.adjacency {
        Adjacency::None => {}
        Adjacency::Complete => {
            for i in 0..n {
                adj[i as usize] = (0..n).filter(|&j| j != i).map(ClientId).collect();
            }
        }
        Adjacency::Ring { k } => {
            for i in 0..n {
                for d in 1..=*k {
                    adj[i as usize].insert(ClientId((i + d) % n));
                    adj[i as usize].insert(ClientId((i + n - d % n) % n));
                }
            }
        }
        Adjacency::Explicit { edges } => {
            for &[a, b] in edges {
                adj[a as usize].insert(ClientId(b));
                adj[b as usize].insert(ClientId(a));
            }
        }
    }
    for (i, set) in adj.into_iter().enumerate() {
        net.set_neighbors(ClientId(i as u32), set)?;
    }
    for p in &c.providers {
        net.manager_mut(ClientId(p.client))?.register_provider(ObjectId(p.object));
        net.advertise(ClientId(p.client), ObjectId(p.object), 0.0)?;
    }
    Ok(net)
}

/// Expected per-object arrival rates from the configured workload.
pub fn initial_demands(s: &Scenario) -> Vec<ObjectDemand> {
    let total = s.clients.count as f64 * s.workload.request_rate;
    zipf_probabilities(s.objects.count, s.workload.zipf_theta)
        .into_iter()
        .enumerate()
        .map(|(i, p)| ObjectDemand {
            object_id: ObjectId(i as u32),
            lambda: total * p,
        })
        .collect()
}

/// Partitions the objects and lays out the broadcast program, if any.
pub fn plan_cell(s: &Scenario, demands: &[ObjectDemand]) -> Result<(PartitionReport, Option<BroadcastProgram>), SimError> {
    let params = PlanParams {
        total_bandwidth: s.cell.total_bandwidth,
        object_size: s.objects.size,
        request_size: s.cell.request_size,
        threshold: s.cell.threshold,
    };
    let report = partition_objects(demands, &params)?;
    let part = &report.partition;
    let program = if part.k() > 0 {
        let options = ProgramOptions {
            slot_duration: s.objects.size * s.cell.channels as f64 / part.b_b,
            index_slots: s.cell.index_slots,
            dedicated_index_channel: s.cell.dedicated_index_channel,
        };
        Some(build_program(&part.published, s.cell.channels, s.cell.scheme, options)?)
    } else {
        None
    };
    Ok((report, program))
}

fn plan_epoch(s: &Scenario, demands: &[ObjectDemand], at: Time) -> Result<(PlanSummary, Epoch), SimError> {
    let (report, program) = plan_cell(s, demands)?;
    let part = &report.partition;
    let summary = PlanSummary {
        at,
        k: part.k(),
        b_b: part.b_b,
        b_d: part.b_d,
        normalized_access: report.access.map(|a| a.normalized),
        feasible: report.feasible,
        cycle_len: program.as_ref().map(|p| p.cycle_len),
        slot_duration: program.as_ref().map(|p| p.options.slot_duration),
    };
    Ok((summary, Epoch { start: at, program }))
}

fn fidelity_outcomes(s: &Scenario) -> Vec<FidelityOutcome> {
    let Some(f) = &s.fidelity else {
        return Vec::new();
    };
    let domain = f.domain();
    let suppliers: Vec<Supplier> = f
        .suppliers
        .iter()
        .map(|sc| Supplier {
            supplier_id: sc.id.clone(),
            f_s: sc.f_s,
            domain: domain.clone(),
        })
        .collect();
    (0..s.clients.count)
        .map(|c| {
            let mut rng = stream(s.seed, STREAM_FIDELITY | c as u64);
            let limits: BTreeMap<String, f64> = f
                .limits
                .iter()
                .map(|(r, &[lo, hi])| (r.clone(), if lo < hi { rng.random_range(lo..=hi) } else { lo }))
                .collect();
            let feasible = fidelity::feasible_configs(&f.models, &domain, &limits);
            let per_supplier: BTreeMap<String, Vec<Config>> =
                suppliers.iter().map(|sp| (sp.supplier_id.clone(), feasible.clone())).collect();
            match fidelity::maximize_utility(&suppliers, &f.utilities, &f.weights, &per_supplier) {
                Ok(choice) => FidelityOutcome {
                    client_id: c,
                    limits,
                    supplier_id: Some(choice.supplier_id),
                    config: Some(choice.config),
                    utility: choice.utility,
                },
                Err(_) => FidelityOutcome {
                    client_id: c,
                    limits,
                    supplier_id: None,
                    config: None,
                    utility: 0.0,
                },
            }
        })
        .collect()
}

/// A copy that reaches a client's cache at `at`.
struct PendingStore {
    at: Time,
    client: ClientId,
    object: ObjectId,
    record: SourceRecord,
}

pub fn run(s: &Scenario) -> Result<Metrics, SimError> {
    let errors = s.validate();
    if !errors.is_empty() {
        return Err(SimError::Invalid(errors));
    }
    let workload = generate_workload(s);
    run_workload(s, &workload)
}

pub fn run_workload(s: &Scenario, workload: &Workload) -> Result<Metrics, SimError> {
    let duration = s.duration_slots as f64;
    let mut sources = Sources::new(s);
    let mut net = build_network(s)?;
    let mut server = BatchingServer::new(s.cell.batching_window)?;
    let cost = s.cell.retrieval_cost;
    let hop_wait = 2.0 * s.latency.hop_slots;

    let mut plans = Vec::new();
    let mut epoch = Epoch {
        start: 0.0,
        program: None,
    };
    let mut broadcast_slots = 0;
    let planning = s.cell.enabled && s.duration_slots > 0;
    if planning {
        let demands = initial_demands(s);
        let (summary, e) = plan_epoch(s, &demands, 0.0)?;
        plans.push(summary);
        epoch = e;
    }
    let interval = s.cell.replan_interval as f64;
    let mut next_replan = if planning && s.cell.replan_interval > 0 { interval } else { f64::INFINITY };
    let mut observed: BTreeMap<ObjectId, u64> = BTreeMap::new();

    let mut pending: Vec<PendingStore> = Vec::new();
    let mut records = Vec::with_capacity(workload.requests.len());
    let mut per_client = vec![(0u64, 0.0f64); s.clients.count as usize];
    let mut ttl_requeries = 0;
    let mut unresolved = 0;

    let replan_until = |until: Time,
                            epoch: &mut Epoch,
                            next_replan: &mut f64,
                            observed: &mut BTreeMap<ObjectId, u64>,
                            plans: &mut Vec<PlanSummary>,
                            broadcast_slots: &mut u64|
     -> Result<(), SimError> {
        while *next_replan <= until && *next_replan < duration {
            let at = *next_replan;
            *broadcast_slots += epoch.aired_slots(at);
            let demands: Vec<ObjectDemand> = (0..s.objects.count)
                .map(|i| ObjectDemand {
                    object_id: ObjectId(i),
                    lambda: observed.get(&ObjectId(i)).copied().unwrap_or(0) as f64 / interval,
                })
                .collect();
            observed.clear();
            let (summary, e) = plan_epoch(s, &demands, at)?;
            plans.push(summary);
            *epoch = e;
            *next_replan += interval;
        }
        Ok(())
    };

    for (qid, req) in workload.requests.iter().enumerate() {
        let (t, c, o) = (req.time, req.client, req.object);
        replan_until(t, &mut epoch, &mut next_replan, &mut observed, &mut plans, &mut broadcast_slots)?;
        server.step(t);

        // copies that have arrived by now
        pending.sort_by(|a, b| a.at.total_cmp(&b.at));
        let due = pending.partition_point(|p| p.at <= t);
        for p in pending.drain(..due) {
            let newer_cached = net
                .manager(p.client)?
                .cache
                .as_ref()
                .and_then(|cache| cache.peek(p.object))
                .is_some_and(|e| e.version > p.record.version);
            if !newer_cached {
                net.store(p.client, p.object, &p.record, p.at, None)?;
            }
        }

        let expired = net
            .manager_mut(c)?
            .cache
            .as_mut()
            .map(|cache| cache.tick(t))
            .unwrap_or_default();
        for action in expired {
            if let TickAction::Requery(x) = action {
                sources.ensure(x, t);
                let rec = sources.at(t).current(x).expect("object exists");
                net.store(c, x, &rec, t, None)?;
                ttl_requeries += 1;
            }
        }

        net.record_read(c, o, t)?;
        sources.ensure(o, t);
        let qos = net.manager(c)?.qos.get(o);
        let local = net.local_lookup(c, o, t, &sources.at(t))?;

        let mut energy = 0.0;
        let outcome: Option<QueryOutcome> = if local.is_some() {
            local
        } else if let Some(program) = epoch.program.as_ref().filter(|p| p.contains(o)) {
            let f = air_fetch(&epoch, program, o, t, cost.switch_slots);
            let air_time = epoch.start + f.air_slot as f64 * epoch.slot_duration();
            sources.ensure(o, f.serve_time);
            let rec = sources.at(air_time).current(o).expect("object exists");
            energy = f.active as f64 * cost.e_active + f.doze as f64 * cost.e_doze;
            *observed.entry(o).or_default() += 1;
            let out = QueryOutcome {
                resolution: Resolution::Broadcast,
                latency: f.serve_time - t,
                payload_age: f.serve_time - rec.written_at,
                p_nm: 1.0,
                version: rec.version,
                written_at: rec.written_at,
                server: None,
            };
            pending.push(PendingStore {
                at: f.serve_time,
                client: c,
                object: o,
                record: rec,
            });
            Some(out)
        } else {
            let neighbor = if s.toggles.p2p {
                net.neighbor_lookup(c, o, t, &sources.at(t))?
            } else {
                None
            };
            match neighbor {
                Some(out) => {
                    energy = cost.e_active + (out.latency - 1.0).max(0.0) * cost.e_doze;
                    Some(out)
                }
                None => {
                    let waited = if s.toggles.p2p { hop_wait } else { 0.0 };
                    let arrival = t + waited;
                    let fire = server.submit(PendingRequest {
                        request_id: qid as u64,
                        object_id: o,
                        arrival,
                    });
                    *observed.entry(o).or_default() += 1;
                    match net.source_fetch(c, o, t, &sources.at(t)) {
                        Ok(mut out) => {
                            out.latency += fire - t;
                            energy = cost.e_active + (out.latency - 1.0).max(0.0) * cost.e_doze;
                            Some(out)
                        }
                        Err(P2pError::Unresolvable(_)) => None,
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        };

        let Some(out) = outcome else {
            unresolved += 1;
            continue;
        };
        let serve_time = t + out.latency;
        sources.ensure(o, serve_time);
        per_client[c.0 as usize].0 += 1;
        per_client[c.0 as usize].1 += energy;
        records.push(QueryRecord {
            query_id: qid as u64,
            client_id: c.0,
            object_id: o.0,
            time: t,
            resolution: out.resolution,
            latency_slots: out.latency,
            staleness_slots: sources.staleness(o, out.version, serve_time),
            qos: qos.value(),
            qos_met: freshness::accepts(qos, out.p_nm),
            p_nm: out.p_nm,
            version: out.version,
            written_at: out.written_at,
            energy,
        });
    }

    if planning {
        replan_until(duration, &mut epoch, &mut next_replan, &mut observed, &mut plans, &mut broadcast_slots)?;
        broadcast_slots += epoch.aired_slots(duration);
    }
    server.flush();
    let counters = server.counters();
    let stats = net.stats();
    Ok(Metrics {
        schema_id: s.schema_id.clone(),
        seed: s.seed,
        duration_slots: s.duration_slots,
        issued: workload.requests.len() as u64,
        answered: records.len() as u64,
        unresolved,
        queries: records,
        clients: per_client
            .into_iter()
            .enumerate()
            .map(|(i, (queries, energy))| ClientSummary {
                client_id: i as u32,
                queries,
                energy,
            })
            .collect(),
        bandwidth: BandwidthSummary {
            broadcast_slots,
            on_demand_requests: counters.requests,
            on_demand_responses: counters.responses,
            saved_by_batching: counters.saved,
            ttl_requeries,
            neighbor_queries: stats.neighbor_queries_sent,
            advertisements: stats.advertisements_delivered,
        },
        plans,
        fidelity: fidelity_outcomes(s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::air_schedule::IndexScheme;
    use crate::cache::PolicyKind;

    fn small() -> Scenario {
        let mut s = Scenario::default();
        s.duration_slots = 1500;
        s.objects.count = 30;
        s.clients.count = 8;
        s.workload.request_rate = 0.05;
        s
    }

    #[test]
    fn zero_rate_or_duration_is_empty() {
        let mut s = small();
        s.workload.request_rate = 0.0;
        assert!(generate_workload(&s).requests.is_empty());
        let mut s = small();
        s.duration_slots = 0;
        let m = run(&s).unwrap();
        assert_eq!(m.issued, 0);
        assert!(m.queries.is_empty());
        assert!(m.plans.is_empty());
        assert_eq!(m.bandwidth.broadcast_slots, 0);
    }

    #[test]
    fn workload_deterministic_and_ordered() {
        let s = small();
        let a = generate_workload(&s);
        assert_eq!(a, generate_workload(&s));
        assert!(a.requests.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(a.requests.iter().all(|r| r.time < s.duration_slots as f64));
        let mut other = s.clone();
        other.seed += 1;
        assert_ne!(a, generate_workload(&other));
    }

    #[test]
    fn uniform_popularity_chi_square() {
        let mut s = small();
        s.objects.count = 20;
        s.clients.count = 40;
        s.duration_slots = 5000;
        s.workload.zipf_theta = 0.0;
        let w = generate_workload(&s);
        let n = w.requests.len() as f64;
        let mut counts = [0.0; 20];
        for r in &w.requests {
            counts[r.object.0 as usize] += 1.0;
        }
        let e = n / 20.0;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // 19 degrees of freedom, 0.999 quantile
        assert!(chi2 < 43.82, "chi2 = {chi2}");
        let sd = (n * (1.0 / 20.0) * (19.0 / 20.0)).sqrt();
        assert!(counts.iter().all(|c| (c - e).abs() <= 3.0 * sd + 1.0));
    }

    #[test]
    fn runs_are_deterministic() {
        let s = small();
        let a = run(&s).unwrap();
        let b = run(&s).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn conservation_and_causality() {
        let s = small();
        let m = run(&s).unwrap();
        assert_eq!(m.answered + m.unresolved, m.issued);
        assert!(m.issued > 0);
        for q in &m.queries {
            assert!(q.written_at <= q.time + q.latency_slots + 1e-9);
            assert!(q.staleness_slots >= 0.0);
            assert!(q.qos_met);
        }
    }

    #[test]
    fn caching_lowers_source_load() {
        let mut s = small();
        s.cell.enabled = false;
        s.clients.qos = 0.3;
        let on = run(&s).unwrap();
        s.toggles.caching = false;
        let off = run(&s).unwrap();
        assert!(on.source_load() < off.source_load(), "{} vs {}", on.source_load(), off.source_load());
        assert_eq!(off.count(Resolution::LocalCache) + off.count(Resolution::NeighborCache), 0);
    }

    #[test]
    fn batching_conserves_transmissions() {
        let mut s = small();
        s.cell.enabled = false;
        s.toggles.caching = false;
        let base = run(&s).unwrap();
        s.cell.batching_window = 8.0;
        let batched = run(&s).unwrap();
        let b = &batched.bandwidth;
        assert!(b.saved_by_batching > 0);
        assert_eq!(b.on_demand_responses + b.saved_by_batching, base.bandwidth.on_demand_responses);
        assert_eq!(base.bandwidth.saved_by_batching, 0);
    }

    #[test]
    fn broadcast_work_independent_of_clients() {
        let mut s = small();
        s.clients.count = 5;
        s.workload.request_rate = 0.08;
        let few = run(&s).unwrap();
        s.clients.count = 20;
        s.workload.request_rate = 0.02;
        let many = run(&s).unwrap();
        assert_eq!(few.plans, many.plans);
        assert!(few.bandwidth.broadcast_slots > 0);
        assert_eq!(few.bandwidth.broadcast_slots, many.bandwidth.broadcast_slots);
    }

    #[test]
    fn broadcast_serves_published_objects() {
        let s = small();
        let m = run(&s).unwrap();
        let plan = &m.plans[0];
        assert!(plan.k > 0);
        assert!(m.count(Resolution::Broadcast) > 0);
        for q in m.queries.iter().filter(|q| q.resolution == Resolution::Broadcast) {
            assert!(q.object_id < plan.k as u32, "zipf ranks publish in id order");
            assert!(q.latency_slots > 0.0);
            assert!(q.energy > 0.0);
        }
    }

    #[test]
    fn index_saves_energy_over_scanning() {
        let mut s = small();
        s.toggles.caching = false;
        s.toggles.p2p = false;
        s.cell.scheme = IndexScheme::None;
        let scan = run(&s).unwrap();
        s.cell.scheme = IndexScheme::OneM { m: 2 };
        let indexed = run(&s).unwrap();
        let mean_energy = |m: &Metrics| {
            let b: Vec<_> = m.queries.iter().filter(|q| q.resolution == Resolution::Broadcast).collect();
            b.iter().map(|q| q.energy).sum::<f64>() / b.len() as f64
        };
        assert!(mean_energy(&indexed) < mean_energy(&scan));
    }

    #[test]
    fn higher_qos_not_staler() {
        let mut low_total = 0.0;
        let mut high_total = 0.0;
        for seed in 0..20 {
            let mut s = small();
            s.seed = seed;
            s.cell.enabled = false;
            s.objects.mean_update = 30.0;
            s.objects.stdv_update = 5.0;
            s.clients.qos = 0.1;
            let low = run(&s).unwrap();
            s.clients.qos = 0.9;
            let high = run(&s).unwrap();
            low_total += low.summary()["mean_staleness_slots"];
            high_total += high.summary()["mean_staleness_slots"];
        }
        assert!(high_total <= low_total, "{high_total} vs {low_total}");
    }

    #[test]
    fn ttl_requery_refreshes() {
        let mut s = small();
        s.cell.enabled = false;
        s.clients.policy = PolicyKind::TtlRequery;
        s.clients.ttl = Some(20.0);
        let m = run(&s).unwrap();
        assert!(m.bandwidth.ttl_requeries > 0);
    }

    #[test]
    fn replanning_records_epochs() {
        let mut s = small();
        s.cell.replan_interval = 500;
        let m = run(&s).unwrap();
        assert_eq!(m.plans.len(), 3);
        assert_eq!(m.plans[1].at, 500.0);
    }

    #[test]
    fn providers_answer_locally() {
        let mut s = small();
        s.cell.enabled = false;
        s.clients.providers = vec![crate::scenario::ProviderConfig { client: 0, object: 0 }];
        let m = run(&s).unwrap();
        assert!(m.count(Resolution::LocalProvider) > 0);
        assert!(m.bandwidth.advertisements > 0);
    }

    #[test]
    fn fidelity_choices_recorded() {
        let text = r#"
schema_id = "aircell/1"
duration_slots = 10
[clients]
count = 3
[fidelity]
suppliers = [{ id = "a", f_s = 0.9 }, { id = "b", f_s = 0.6 }]
params = [{ name = "fps", domain = { kind = "discrete", values = [20.0, 30.0, 40.0] } }]
utilities = { fps = { kind = "table", entries = [{ value = 20.0, utility = 0.3 }, { value = 30.0, utility = 0.7 }, { value = 40.0, utility = 1.0 }] } }
models = [{ resource_id = "bw", coefficients = [0.1], intercept = 0.0 }]
limits = { bw = [2.5, 3.5] }
"#;
        let s = crate::scenario::parse_scenario_str(text).unwrap();
        let m = run(&s).unwrap();
        assert_eq!(m.fidelity.len(), 3);
        for f in &m.fidelity {
            let fps = f.config.as_ref().unwrap()["fps"];
            assert!(0.1 * fps <= f.limits["bw"]);
            assert_eq!(f.supplier_id.as_deref(), Some("a"));
        }
    }

    #[test]
    fn csv_layout() {
        let m = run(&small()).unwrap();
        let csv = m.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(Metrics::CSV_HEADER));
        assert!(csv.lines().all(|l| l.split(',').count() == 8));
        assert!(csv.contains("summary,source_load,"));
    }

    #[test]
    fn invalid_scenario_rejected_before_start() {
        let mut s = small();
        s.cell.total_bandwidth = -1.0;
        assert!(matches!(run(&s), Err(SimError::Invalid(_))));
    }
}
