//! Query resolution among Providers, Consumers and Information Managers.
//!
//! A query walks a fixed chain: local cache, local provider, a one-hop
//! neighbor broadcast, and finally the data source. Cached answers are used
//! only when they pass the consumer's QoS test. Neighbor queries are never
//! relayed further.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{Cache, CacheEntry};
use crate::freshness::{self, FreshnessStats, QosMap, QosSetting};
use crate::ids::{ClientId, ObjectId, Time};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum P2pError {
    #[error("client {0} is not part of the network")]
    UnknownClient(ClientId),
    #[error("client {client} has no provider for service {service}")]
    NotRegistered { client: ClientId, service: ObjectId },
    #[error("service {0} cannot be resolved: source unreachable and no peer can answer")]
    Unresolvable(ObjectId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    LocalCache,
    LocalProvider,
    NeighborCache,
    NeighborProvider,
    /// Retrieved from the cell's broadcast program (produced by the engine).
    Broadcast,
    Source,
}

impl Resolution {
    pub fn as_str(self) -> &'static str {
        match self {
            Resolution::LocalCache => "local_cache",
            Resolution::LocalProvider => "local_provider",
            Resolution::NeighborCache => "neighbor_cache",
            Resolution::NeighborProvider => "neighbor_provider",
            Resolution::Broadcast => "broadcast",
            Resolution::Source => "source",
        }
    }

    pub fn is_cached(self) -> bool {
        matches!(self, Resolution::LocalCache | Resolution::NeighborCache)
    }
}

/// The current version of an object at its source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceRecord {
    pub version: u64,
    pub written_at: Time,
    pub stats: Option<FreshnessStats>,
    pub payload: Vec<u8>,
}

/// Read access to the data sources of a scenario.
pub trait SourceView {
    /// Current version of `object`, if the object exists.
    fn current(&self, object: ObjectId) -> Option<SourceRecord>;
    /// Whether clients can contact the object's source directly.
    fn reachable(&self, object: ObjectId) -> bool {
        self.current(object).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub local_slots: f64,
    pub hop_slots: f64,
    pub source_slots: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            local_slots: 0.0,
            hop_slots: 1.0,
            source_slots: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P2pConfig {
    pub p2p_enabled: bool,
    pub caching_enabled: bool,
    pub overhearing: bool,
    pub latency: LatencyModel,
}

impl Default for P2pConfig {
    fn default() -> Self {
        Self {
            p2p_enabled: true,
            caching_enabled: true,
            overhearing: false,
            latency: LatencyModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub resolution: Resolution,
    pub latency: f64,
    /// `now` minus the source write time of the served version.
    pub payload_age: f64,
    /// P_NM of the served copy at serve time (1 for fresh answers).
    pub p_nm: f64,
    pub version: u64,
    pub written_at: Time,
    pub server: Option<ClientId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Advertisement {
    pub provider: ClientId,
    pub service: ObjectId,
    pub issued_at: Time,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborQuery {
    pub from: ClientId,
    pub service: ObjectId,
    pub qos: QosSetting,
    pub hops: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseKind {
    Cache,
    Provider,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborResponse {
    pub responder: ClientId,
    pub kind: ResponseKind,
    pub version: u64,
    pub written_at: Time,
    pub stats: Option<FreshnessStats>,
    pub payload: Vec<u8>,
    pub p_nm: f64,
}

#[derive(Debug, Clone)]
pub struct InformationManager {
    pub client_id: ClientId,
    pub registered_providers: BTreeSet<ObjectId>,
    pub neighbor_ids: BTreeSet<ClientId>,
    /// `None` when caching is disabled for this client.
    pub cache: Option<Cache>,
    pub qos: QosMap,
    /// Providers learned from advertisements, per service.
    pub heard: BTreeMap<ObjectId, BTreeSet<ClientId>>,
}

impl InformationManager {
    pub fn new(client_id: ClientId, cache: Option<Cache>, qos: QosMap) -> Self {
        Self {
            client_id,
            registered_providers: BTreeSet::new(),
            neighbor_ids: BTreeSet::new(),
            cache,
            qos,
            heard: BTreeMap::new(),
        }
    }

    /// Registers a local provider. Returns false if it was already present.
    pub fn register_provider(&mut self, service: ObjectId) -> bool {
        self.registered_providers.insert(service)
    }

    /// One advertisement per current one-hop neighbor.
    pub fn advertise(&self, service: ObjectId, now: Time) -> Result<Vec<Advertisement>, P2pError> {
        if !self.registered_providers.contains(&service) {
            return Err(P2pError::NotRegistered {
                client: self.client_id,
                service,
            });
        }
        Ok(self
            .neighbor_ids
            .iter()
            .map(|_| Advertisement {
                provider: self.client_id,
                service,
                issued_at: now,
            })
            .collect())
    }

    pub fn receive_advertisement(&mut self, ad: &Advertisement) {
        self.heard.entry(ad.service).or_default().insert(ad.provider);
    }

    /// Answers a query from a one-hop neighbor from the local cache (if the
    /// copy passes the querier's QoS) or a local provider. Never relays.
    pub fn handle_neighbor_query(
        &self,
        query: &NeighborQuery,
        now: Time,
        source: &dyn SourceView,
    ) -> Option<NeighborResponse> {
        assert!(query.hops <= 1, "neighbor query travelled {} hops", query.hops);
        if let Some(entry) = self.cache.as_ref().and_then(|c| c.peek(query.service)) {
            let p_nm = entry.p_not_modified(now);
            if freshness::accepts(query.qos, p_nm) {
                return Some(NeighborResponse {
                    responder: self.client_id,
                    kind: ResponseKind::Cache,
                    version: entry.version,
                    written_at: entry.written_at,
                    stats: entry.source_stats,
                    payload: entry.payload.clone(),
                    p_nm,
                });
            }
        }
        if self.registered_providers.contains(&query.service) {
            let rec = source.current(query.service)?;
            return Some(NeighborResponse {
                responder: self.client_id,
                kind: ResponseKind::Provider,
                version: rec.version,
                written_at: rec.written_at,
                stats: rec.stats,
                payload: rec.payload,
                p_nm: 1.0,
            });
        }
        None
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NetworkStats {
    pub neighbor_queries_sent: u64,
    pub neighbor_responses: u64,
    pub advertisements_delivered: u64,
    pub max_hops: u8,
}

/// All Information Managers of one cell plus the message accounting.
#[derive(Debug, Clone)]
pub struct Network {
    managers: Vec<InformationManager>,
    config: P2pConfig,
    stats: NetworkStats,
}

impl Network {
    /// Managers must be indexed by client id (`managers[i].client_id == i`).
    pub fn new(managers: Vec<InformationManager>, config: P2pConfig) -> Self {
        for (i, m) in managers.iter().enumerate() {
            assert_eq!(m.client_id.0 as usize, i, "managers must be ordered by client id");
        }
        Self {
            managers,
            config,
            stats: NetworkStats::default(),
        }
    }

    pub fn config(&self) -> &P2pConfig {
        &self.config
    }

    pub fn stats(&self) -> &NetworkStats {
        &self.stats
    }

    pub fn managers(&self) -> &[InformationManager] {
        &self.managers
    }

    pub fn manager(&self, client: ClientId) -> Result<&InformationManager, P2pError> {
        self.managers
            .get(client.0 as usize)
            .ok_or(P2pError::UnknownClient(client))
    }

    pub fn manager_mut(&mut self, client: ClientId) -> Result<&mut InformationManager, P2pError> {
        self.managers
            .get_mut(client.0 as usize)
            .ok_or(P2pError::UnknownClient(client))
    }

    pub fn set_neighbors(&mut self, client: ClientId, neighbors: impl IntoIterator<Item = ClientId>) -> Result<(), P2pError> {
        let im = self.manager_mut(client)?;
        im.neighbor_ids = neighbors.into_iter().filter(|&n| n != client).collect();
        Ok(())
    }

    /// Delivers an advertisement to every current one-hop neighbor.
    pub fn advertise(
        &mut self,
        provider: ClientId,
        service: ObjectId,
        now: Time,
    ) -> Result<Vec<(ClientId, Advertisement)>, P2pError> {
        let im = self.manager(provider)?;
        let ads = im.advertise(service, now)?;
        let targets: Vec<ClientId> = im.neighbor_ids.iter().copied().collect();
        let mut delivered = Vec::with_capacity(ads.len());
        for (to, ad) in targets.into_iter().zip(ads) {
            if let Some(m) = self.managers.get_mut(to.0 as usize) {
                m.receive_advertisement(&ad);
                self.stats.advertisements_delivered += 1;
                self.stats.max_hops = self.stats.max_hops.max(1);
                delivered.push((to, ad));
            }
        }
        Ok(delivered)
    }

    /// Records a read in the client's cache statistics.
    pub fn record_read(&mut self, client: ClientId, service: ObjectId, now: Time) -> Result<(), P2pError> {
        if let Some(c) = self.manager_mut(client)?.cache.as_mut() {
            c.record_read(service, now);
        }
        Ok(())
    }

    /// Local cache, then local provider.
    pub fn local_lookup(
        &mut self,
        client: ClientId,
        service: ObjectId,
        now: Time,
        source: &dyn SourceView,
    ) -> Result<Option<QueryOutcome>, P2pError> {
        let local = self.config.latency.local_slots;
        let im = self.manager_mut(client)?;
        let qos = im.qos.get(service);
        if let Some(entry) = im.cache.as_mut().and_then(|c| c.get(service)) {
            let p_nm = entry.p_not_modified(now);
            if freshness::accepts(qos, p_nm) {
                return Ok(Some(QueryOutcome {
                    resolution: Resolution::LocalCache,
                    latency: local,
                    payload_age: now - entry.written_at,
                    p_nm,
                    version: entry.version,
                    written_at: entry.written_at,
                    server: Some(client),
                }));
            }
        }
        if im.registered_providers.contains(&service) {
            if let Some(rec) = source.current(service) {
                return Ok(Some(QueryOutcome {
                    resolution: Resolution::LocalProvider,
                    latency: local,
                    payload_age: now - rec.written_at,
                    p_nm: 1.0,
                    version: rec.version,
                    written_at: rec.written_at,
                    server: Some(client),
                }));
            }
        }
        Ok(None)
    }

    /// Broadcasts the query to one-hop neighbors and takes the freshest
    /// answer (highest P_NM, ties to the lowest client id). The answer is
    /// stored in the querier's cache. Latency is one round trip.
    pub fn neighbor_lookup(
        &mut self,
        client: ClientId,
        service: ObjectId,
        now: Time,
        source: &dyn SourceView,
    ) -> Result<Option<QueryOutcome>, P2pError> {
        let im = self.manager(client)?;
        let query = NeighborQuery {
            from: client,
            service,
            qos: im.qos.get(service),
            hops: 1,
        };
        let neighbors: Vec<ClientId> = im.neighbor_ids.iter().copied().collect();
        let mut best: Option<NeighborResponse> = None;
        for n in neighbors {
            let Some(peer) = self.managers.get(n.0 as usize) else {
                continue;
            };
            self.stats.neighbor_queries_sent += 1;
            self.stats.max_hops = self.stats.max_hops.max(query.hops);
            if let Some(resp) = peer.handle_neighbor_query(&query, now, source) {
                self.stats.neighbor_responses += 1;
                // neighbor ids iterate ascending, so strict > keeps the lowest id on ties
                if best.as_ref().is_none_or(|b| resp.p_nm > b.p_nm) {
                    best = Some(resp);
                }
            }
        }
        let Some(resp) = best else {
            return Ok(None);
        };
        let resolution = match resp.kind {
            ResponseKind::Cache => Resolution::NeighborCache,
            ResponseKind::Provider => Resolution::NeighborProvider,
        };
        let outcome = QueryOutcome {
            resolution,
            latency: 2.0 * self.config.latency.hop_slots,
            payload_age: now - resp.written_at,
            p_nm: resp.p_nm,
            version: resp.version,
            written_at: resp.written_at,
            server: Some(resp.responder),
        };
        let record = SourceRecord {
            version: resp.version,
            written_at: resp.written_at,
            stats: resp.stats,
            payload: resp.payload,
        };
        self.store(client, service, &record, now, Some(resp.responder))?;
        Ok(Some(outcome))
    }

    /// Direct request to the data source. The answer is cached.
    pub fn source_fetch(
        &mut self,
        client: ClientId,
        service: ObjectId,
        now: Time,
        source: &dyn SourceView,
    ) -> Result<QueryOutcome, P2pError> {
        self.manager(client)?;
        if !source.reachable(service) {
            return Err(P2pError::Unresolvable(service));
        }
        let rec = source
            .current(service)
            .ok_or(P2pError::Unresolvable(service))?;
        let outcome = QueryOutcome {
            resolution: Resolution::Source,
            latency: self.config.latency.source_slots,
            payload_age: now - rec.written_at,
            p_nm: 1.0,
            version: rec.version,
            written_at: rec.written_at,
            server: None,
        };
        self.store(client, service, &rec, now, None)?;
        Ok(outcome)
    }

    /// Stores a received copy in the querier's cache; with overhearing on,
    /// the querier's neighbors (other than the responder) store it too.
    pub fn store(
        &mut self,
        client: ClientId,
        service: ObjectId,
        record: &SourceRecord,
        now: Time,
        responder: Option<ClientId>,
    ) -> Result<(), P2pError> {
        if !self.config.caching_enabled {
            return Ok(());
        }
        let entry = CacheEntry {
            object_id: service,
            payload: record.payload.clone(),
            source_stats: record.stats,
            version: record.version,
            written_at: record.written_at,
            cached_at: now,
            ttl: None,
        };
        let im = self.manager_mut(client)?;
        let qos = im.qos.clone();
        if let Some(c) = im.cache.as_mut() {
            c.insert_with_eviction(entry.clone(), now, &qos);
        }
        if self.config.overhearing {
            let listeners: Vec<ClientId> = self.managers[client.0 as usize]
                .neighbor_ids
                .iter()
                .copied()
                .filter(|&n| Some(n) != responder)
                .collect();
            for n in listeners {
                if let Some(m) = self.managers.get_mut(n.0 as usize) {
                    let qos = m.qos.clone();
                    if let Some(c) = m.cache.as_mut() {
                        let stale_or_missing = c
                            .peek(service)
                            .is_none_or(|e| e.version < entry.version);
                        if stale_or_missing {
                            c.insert_with_eviction(entry.clone(), now, &qos);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Full chain: local cache, local provider, neighbors, source. Latency
    /// accumulates across the stages actually tried.
    pub fn resolve_query(
        &mut self,
        client: ClientId,
        service: ObjectId,
        now: Time,
        source: &dyn SourceView,
    ) -> Result<QueryOutcome, P2pError> {
        self.record_read(client, service, now)?;
        if let Some(o) = self.local_lookup(client, service, now, source)? {
            return Ok(o);
        }
        let mut waited = 0.0;
        if self.config.p2p_enabled {
            if let Some(o) = self.neighbor_lookup(client, service, now, source)? {
                return Ok(o);
            }
            waited = 2.0 * self.config.latency.hop_slots;
        }
        let mut o = self.source_fetch(client, service, now, source)?;
        o.latency += waited;
        Ok(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::PolicyKind;
    use crate::freshness::p_not_modified;

    struct OneSource {
        reachable: bool,
        rec: SourceRecord,
    }

    impl SourceView for OneSource {
        fn current(&self, _object: ObjectId) -> Option<SourceRecord> {
            Some(self.rec.clone())
        }
        fn reachable(&self, _object: ObjectId) -> bool {
            self.reachable
        }
    }

    fn source() -> OneSource {
        OneSource {
            reachable: true,
            rec: SourceRecord {
                version: 7,
                written_at: 0.0,
                stats: Some(stats_at(0.0)),
                payload: vec![7],
            },
        }
    }

    fn stats_at(t_last: f64) -> FreshnessStats {
        FreshnessStats {
            mtbu: 100.0,
            stdv_mtbu: 20.0,
            t_last_update: t_last,
            n_intervals: 10,
        }
    }

    fn network(n: u32, qos: f64, config: P2pConfig) -> Network {
        let managers = (0..n)
            .map(|i| {
                InformationManager::new(
                    ClientId(i),
                    Some(Cache::new(4, PolicyKind::Lru).unwrap()),
                    QosMap::uniform(QosSetting::new(qos).unwrap()),
                )
            })
            .collect();
        Network::new(managers, config)
    }

    fn seed_copy(net: &mut Network, client: u32, t_last: f64) {
        let rec = SourceRecord {
            version: 1,
            written_at: t_last,
            stats: Some(stats_at(t_last)),
            payload: vec![1],
        };
        net.store(ClientId(client), ObjectId(0), &rec, t_last, None).unwrap();
    }

    /// Elapsed time since last update giving the requested P_NM, by bisection
    /// on the freshness model.
    fn elapsed_for_pnm(target: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 400.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if p_not_modified(&stats_at(0.0), mid).unwrap() > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn qos_zero_hits_local_cache() {
        let mut net = network(2, 0.0, P2pConfig::default());
        seed_copy(&mut net, 0, 0.0);
        let o = net.resolve_query(ClientId(0), ObjectId(0), 1000.0, &source()).unwrap();
        assert_eq!(o.resolution, Resolution::LocalCache);
        assert_eq!(o.latency, 0.0);
        assert_eq!(o.payload_age, 1000.0);
    }

    #[test]
    fn qos_one_goes_to_source() {
        let mut net = network(3, 1.0, P2pConfig::default());
        for c in 0..3 {
            seed_copy(&mut net, c, 0.0);
        }
        net.set_neighbors(ClientId(0), [ClientId(1), ClientId(2)]).unwrap();
        let o = net.resolve_query(ClientId(0), ObjectId(0), 10.0, &source()).unwrap();
        assert_eq!(o.resolution, Resolution::Source);
        assert_eq!(o.latency, 2.0 + 5.0);
        assert_eq!(o.version, 7);
    }

    #[test]
    fn stale_local_fresh_neighbor() {
        // local copy P_NM = 0.3, neighbor copy P_NM = 0.7, qos 0.5
        let now = 500.0;
        let e_local = elapsed_for_pnm(0.3);
        let e_neigh = elapsed_for_pnm(0.7);
        let mut net = network(2, 0.5, P2pConfig::default());
        seed_copy(&mut net, 0, now - e_local);
        seed_copy(&mut net, 1, now - e_neigh);
        net.set_neighbors(ClientId(0), [ClientId(1)]).unwrap();
        let local_p = net.manager(ClientId(0)).unwrap().cache.as_ref().unwrap().peek(ObjectId(0)).unwrap().p_not_modified(now);
        assert!((local_p - 0.3).abs() < 1e-6);
        let o = net.resolve_query(ClientId(0), ObjectId(0), now, &source()).unwrap();
        assert_eq!(o.resolution, Resolution::NeighborCache);
        assert_eq!(o.server, Some(ClientId(1)));
        assert!((o.p_nm - 0.7).abs() < 1e-6);
        assert!(o.p_nm >= 0.5);
    }

    #[test]
    fn freshest_neighbor_wins_ties_lowest_id() {
        let now = 500.0;
        let mut net = network(4, 0.1, P2pConfig::default());
        seed_copy(&mut net, 1, now - elapsed_for_pnm(0.4));
        seed_copy(&mut net, 2, now - elapsed_for_pnm(0.9));
        seed_copy(&mut net, 3, now - elapsed_for_pnm(0.9));
        net.set_neighbors(ClientId(0), [ClientId(3), ClientId(1), ClientId(2)]).unwrap();
        let o = net.resolve_query(ClientId(0), ObjectId(0), now, &source()).unwrap();
        assert_eq!(o.server, Some(ClientId(2)));
    }

    #[test]
    fn neighbor_provider_answers_fresh() {
        let mut net = network(2, 0.9, P2pConfig::default());
        net.manager_mut(ClientId(1)).unwrap().register_provider(ObjectId(0));
        net.set_neighbors(ClientId(0), [ClientId(1)]).unwrap();
        let o = net.resolve_query(ClientId(0), ObjectId(0), 3.0, &source()).unwrap();
        assert_eq!(o.resolution, Resolution::NeighborProvider);
        assert_eq!(o.p_nm, 1.0);
        // the querier now holds the copy
        assert!(net.manager(ClientId(0)).unwrap().cache.as_ref().unwrap().contains(ObjectId(0)));
    }

    #[test]
    fn local_provider_before_neighbors() {
        let mut net = network(2, 1.0, P2pConfig::default());
        net.manager_mut(ClientId(0)).unwrap().register_provider(ObjectId(0));
        let o = net.resolve_query(ClientId(0), ObjectId(0), 3.0, &source()).unwrap();
        assert_eq!(o.resolution, Resolution::LocalProvider);
    }

    #[test]
    fn silent_neighbor_without_copy_or_provider() {
        let net = network(2, 0.0, P2pConfig::default());
        let q = NeighborQuery {
            from: ClientId(0),
            service: ObjectId(0),
            qos: QosSetting::ANY,
            hops: 1,
        };
        assert!(net.managers()[1].handle_neighbor_query(&q, 1.0, &source()).is_none());
    }

    #[test]
    fn unreachable_source_is_unresolvable() {
        let mut net = network(1, 1.0, P2pConfig::default());
        let mut src = source();
        src.reachable = false;
        assert_eq!(
            net.resolve_query(ClientId(0), ObjectId(0), 1.0, &src),
            Err(P2pError::Unresolvable(ObjectId(0)))
        );
    }

    #[test]
    fn advertisements_reach_current_neighbors_only() {
        let mut net = network(5, 0.0, P2pConfig::default());
        net.manager_mut(ClientId(0)).unwrap().register_provider(ObjectId(3));
        net.set_neighbors(ClientId(0), [ClientId(1), ClientId(2), ClientId(3)]).unwrap();
        assert_eq!(net.advertise(ClientId(0), ObjectId(3), 0.0).unwrap().len(), 3);
        net.set_neighbors(ClientId(0), []).unwrap();
        assert!(net.advertise(ClientId(0), ObjectId(3), 1.0).unwrap().is_empty());
        net.set_neighbors(ClientId(0), [ClientId(4)]).unwrap();
        let d = net.advertise(ClientId(0), ObjectId(3), 2.0).unwrap();
        assert_eq!(d.iter().map(|(c, _)| *c).collect::<Vec<_>>(), vec![ClientId(4)]);
        assert!(net.manager(ClientId(4)).unwrap().heard[&ObjectId(3)].contains(&ClientId(0)));
        assert!(matches!(
            net.advertise(ClientId(1), ObjectId(3), 0.0),
            Err(P2pError::NotRegistered { .. })
        ));
        assert_eq!(net.stats().max_hops, 1);
    }

    #[test]
    fn overhearing_seeds_neighbor_caches() {
        let config = P2pConfig {
            overhearing: true,
            ..P2pConfig::default()
        };
        let mut net = network(3, 1.0, config);
        net.set_neighbors(ClientId(0), [ClientId(1), ClientId(2)]).unwrap();
        net.resolve_query(ClientId(0), ObjectId(0), 1.0, &source()).unwrap();
        for c in 1..3 {
            assert!(net.manager(ClientId(c)).unwrap().cache.as_ref().unwrap().contains(ObjectId(0)));
        }
    }

    #[test]
    fn caching_disabled_stores_nothing() {
        let config = P2pConfig {
            caching_enabled: false,
            ..P2pConfig::default()
        };
        let mut net = network(1, 0.0, config);
        net.resolve_query(ClientId(0), ObjectId(0), 1.0, &source()).unwrap();
        let o = net.resolve_query(ClientId(0), ObjectId(0), 2.0, &source()).unwrap();
        assert_eq!(o.resolution, Resolution::Source);
    }
}
