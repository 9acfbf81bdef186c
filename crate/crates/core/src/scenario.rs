//! Scenario files.
//!
//! Scenarios are TOML documents gated by a `schema_id`. Every section and
//! most fields have defaults, so a minimal file only needs the schema id.
//! Unknown keys and semantic problems are reported together.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::air_schedule::IndexScheme;
use crate::cache::PolicyKind;
use crate::fidelity::{FidelityDomain, FidelityParam, ResourceModel, UtilityFn, Weights, DEFAULT_GRID_POINTS};
use crate::p2p::LatencyModel;
use crate::retrieval::CostModel;

pub const SCHEMA_ID: &str = "aircell/1";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub schema_id: String,
    pub seed: u64,
    pub duration_slots: u64,
    pub objects: ObjectsConfig,
    pub clients: ClientsConfig,
    pub workload: WorkloadConfig,
    pub cell: CellConfig,
    pub toggles: Toggles,
    pub latency: LatencyModel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<FidelityConfig>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            schema_id: SCHEMA_ID.to_string(),
            seed: 1,
            duration_slots: 2000,
            objects: ObjectsConfig::default(),
            clients: ClientsConfig::default(),
            workload: WorkloadConfig::default(),
            cell: CellConfig::default(),
            toggles: Toggles::default(),
            latency: LatencyModel::default(),
            fidelity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectsConfig {
    pub count: u32,
    /// Object size S in bandwidth-slot units (uniform across objects).
    pub size: f64,
    pub mean_update: f64,
    pub stdv_update: f64,
    /// Updates generated before time 0 so freshness statistics exist.
    pub history_updates: u32,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<ObjectOverride>,
}

impl Default for ObjectsConfig {
    fn default() -> Self {
        Self {
            count: 100,
            size: 1.0,
            mean_update: 100.0,
            stdv_update: 20.0,
            history_updates: 16,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectOverride {
    pub id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_update: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stdv_update: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Adjacency {
    None,
    Complete,
    /// Each client neighbors the `k` clients on either side.
    Ring { k: u32 },
    Explicit { edges: Vec<[u32; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub client: u32,
    pub object: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientsConfig {
    pub count: u32,
    pub cache_capacity: usize,
    pub policy: PolicyKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ttl: Option<f64>,
    pub qos: f64,
    /// Object id (as a string key) to QoS setting.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub qos_per_object: BTreeMap<String, f64>,
    pub adjacency: Adjacency,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub providers: Vec<ProviderConfig>,
}

impl Default for ClientsConfig {
    fn default() -> Self {
        Self {
            count: 10,
            cache_capacity: 10,
            policy: PolicyKind::Lru,
            ttl: None,
            qos: 0.5,
            qos_per_object: BTreeMap::new(),
            adjacency: Adjacency::Ring { k: 1 },
            providers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    /// Poisson request rate per client per slot.
    pub request_rate: f64,
    pub zipf_theta: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            request_rate: 0.02,
            zipf_theta: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CellConfig {
    pub enabled: bool,
    pub channels: u32,
    pub scheme: IndexScheme,
    pub dedicated_index_channel: bool,
    pub index_slots: u32,
    pub total_bandwidth: f64,
    pub request_size: f64,
    /// Bound on the planner's mean access time.
    pub threshold: f64,
    pub batching_window: f64,
    /// Re-plan every this many slots from observed demand; 0 disables.
    pub replan_interval: u64,
    pub retrieval_cost: CostModel,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            channels: 1,
            scheme: IndexScheme::OneM { m: 2 },
            dedicated_index_channel: false,
            index_slots: 1,
            total_bandwidth: 4.0,
            request_size: 0.25,
            threshold: 1.0,
            batching_window: 0.0,
            replan_interval: 0,
            retrieval_cost: CostModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toggles {
    pub p2p: bool,
    pub caching: bool,
    pub overhearing: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            p2p: true,
            caching: true,
            overhearing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplierConfig {
    pub id: String,
    pub f_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityConfig {
    pub params: Vec<FidelityParam>,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    pub suppliers: Vec<SupplierConfig>,
    pub utilities: BTreeMap<String, UtilityFn>,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub models: Vec<ResourceModel>,
    /// Per-resource `[lo, hi]`; each client draws its limit uniformly.
    #[serde(default)]
    pub limits: BTreeMap<String, [f64; 2]>,
}

fn default_grid() -> usize {
    DEFAULT_GRID_POINTS
}

impl FidelityConfig {
    pub fn domain(&self) -> FidelityDomain {
        FidelityDomain {
            params: self.params.clone(),
            grid_points: self.grid_points,
        }
    }
}

impl Scenario {
    /// Every semantic problem, one message per problem.
    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                e.push(msg);
            }
        };
        check(
            self.schema_id == SCHEMA_ID,
            format!("schema_id: expected \"{SCHEMA_ID}\", found \"{}\"", self.schema_id),
        );
        check(self.seed <= i64::MAX as u64, "seed: must fit in a signed 64-bit integer".into());

        let o = &self.objects;
        check(o.count >= 1, "objects.count: must be at least 1".into());
        check(o.size > 0.0 && o.size.is_finite(), "objects.size: must be positive".into());
        check(o.mean_update > 0.0 && o.mean_update.is_finite(), "objects.mean_update: must be positive".into());
        check(o.stdv_update >= 0.0 && o.stdv_update.is_finite(), "objects.stdv_update: must be non-negative".into());
        check(o.history_updates >= 2, "objects.history_updates: must be at least 2".into());
        for (i, ov) in o.overrides.iter().enumerate() {
            check(ov.id < o.count, format!("objects.overrides[{i}].id: object {} does not exist", ov.id));
            if let Some(m) = ov.mean_update {
                check(m > 0.0 && m.is_finite(), format!("objects.overrides[{i}].mean_update: must be positive"));
            }
            if let Some(s) = ov.stdv_update {
                check(s >= 0.0 && s.is_finite(), format!("objects.overrides[{i}].stdv_update: must be non-negative"));
            }
        }

        let c = &self.clients;
        check(c.count >= 1, "clients.count: must be at least 1".into());
        check(c.cache_capacity >= 1, "clients.cache_capacity: must be at least 1".into());
        check((0.0..=1.0).contains(&c.qos), "clients.qos: must lie in [0, 1]".into());
        if let Some(t) = c.ttl {
            check(t > 0.0, "clients.ttl: must be positive".into());
        }
        for (k, q) in &c.qos_per_object {
            match k.parse::<u32>() {
                Ok(id) => check(id < o.count, format!("clients.qos_per_object.{k}: object does not exist")),
                Err(_) => check(false, format!("clients.qos_per_object.{k}: key is not an object id")),
            }
            check((0.0..=1.0).contains(q), format!("clients.qos_per_object.{k}: must lie in [0, 1]"));
        }
        match &c.adjacency {
            Adjacency::Ring { k } => check(*k >= 1, "clients.adjacency.k: must be at least 1".into()),
            Adjacency::Explicit { edges } => {
                for (i, [a, b]) in edges.iter().enumerate() {
                    check(
                        *a < c.count && *b < c.count,
                        format!("clients.adjacency.edges[{i}]: client id out of range"),
                    );
                }
            }
            _ => {}
        }
        for (i, p) in c.providers.iter().enumerate() {
            check(p.client < c.count, format!("clients.providers[{i}].client: client {} does not exist", p.client));
            check(p.object < o.count, format!("clients.providers[{i}].object: object {} does not exist", p.object));
        }

        let w = &self.workload;
        check(w.request_rate >= 0.0 && w.request_rate.is_finite(), "workload.request_rate: must be non-negative".into());
        check(w.zipf_theta >= 0.0 && w.zipf_theta.is_finite(), "workload.zipf_theta: must be non-negative".into());

        let cell = &self.cell;
        check(cell.channels >= 1, "cell.channels: must be at least 1".into());
        check(
            !cell.dedicated_index_channel || cell.channels >= 2,
            "cell.dedicated_index_channel: needs at least two channels".into(),
        );
        check(cell.index_slots >= 1, "cell.index_slots: must be at least 1".into());
        if let IndexScheme::OneM { m } = cell.scheme {
            check(m >= 1, "cell.scheme.m: must be at least 1".into());
        }
        check(cell.total_bandwidth > 0.0 && cell.total_bandwidth.is_finite(), "cell.total_bandwidth: must be positive".into());
        check(cell.request_size >= 0.0 && cell.request_size.is_finite(), "cell.request_size: must be non-negative".into());
        check(cell.threshold > 0.0, "cell.threshold: must be positive".into());
        check(cell.batching_window >= 0.0 && cell.batching_window.is_finite(), "cell.batching_window: must be non-negative".into());
        if let Err(err) = cell.retrieval_cost.validate() {
            check(false, format!("cell.retrieval_cost: {err}"));
        }

        for (name, v) in [
            ("local_slots", self.latency.local_slots),
            ("hop_slots", self.latency.hop_slots),
            ("source_slots", self.latency.source_slots),
        ] {
            check(v >= 0.0 && v.is_finite(), format!("latency.{name}: must be non-negative"));
        }

        if let Some(f) = &self.fidelity {
            if let Err(err) = f.domain().validate() {
                check(false, format!("fidelity.params: {err}"));
            }
            check(!f.suppliers.is_empty(), "fidelity.suppliers: at least one supplier".into());
            for (i, s) in f.suppliers.iter().enumerate() {
                check((0.0..=1.0).contains(&s.f_s), format!("fidelity.suppliers[{i}].f_s: must lie in [0, 1]"));
            }
            for p in &f.params {
                match f.utilities.get(&p.name) {
                    None => check(false, format!("fidelity.utilities.{}: missing", p.name)),
                    Some(u) => {
                        if let Err(err) = u.validate(&p.name) {
                            check(false, format!("fidelity.utilities.{}: {err}", p.name));
                        }
                    }
                }
            }
            if let Err(err) = f.weights.validate() {
                check(false, format!("fidelity.weights: {err}"));
            }
            for (i, m) in f.models.iter().enumerate() {
                check(
                    m.coefficients.len() == f.params.len(),
                    format!("fidelity.models[{i}].coefficients: expected {} values", f.params.len()),
                );
            }
            for (r, [lo, hi]) in &f.limits {
                check(lo <= hi, format!("fidelity.limits.{r}: lower bound exceeds upper bound"));
            }
        }
        e
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// Parses and validates scenario text. Unknown keys are errors.
pub fn parse_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let mut unknown = Vec::new();
    let scenario: Scenario = serde_ignored::deserialize(de, |path| unknown.push(format!("{path}: unknown key")))
        .map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let mut errors = unknown;
    errors.extend(scenario.validate());
    if errors.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Invalid(errors))
    }
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario_str(&text)
}
