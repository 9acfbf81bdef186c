//! Adaptive fidelity: log resource consumption per configuration, learn a
//! linear model per resource, enumerate configurations that fit the live
//! resource limits, and pick the supplier and configuration of highest
//! utility.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Parameter name to value.
pub type Config = BTreeMap<String, f64>;

pub const DEFAULT_GRID_POINTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FidelityError {
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("value {value} outside the domain of {param}")]
    OutOfDomain { param: String, value: f64 },
    #[error("parameter {0} has an invalid domain")]
    InvalidDomain(String),
    #[error("resource {resource}: {samples} samples, need at least {needed}")]
    InsufficientSamples {
        resource: String,
        samples: usize,
        needed: usize,
    },
    #[error("resource {0}: design matrix is rank deficient")]
    RankDeficient(String),
    #[error("no supplier has a feasible configuration")]
    NoConfiguration,
    #[error("no utility function for parameter {0}")]
    MissingUtility(String),
    #[error("utility table for {0} has no entry for {1}")]
    NoTableEntry(String, f64),
    #[error("{0} must lie in [0, 1]")]
    OutOfUnitRange(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamDomain {
    Discrete {
        values: Vec<f64>,
        /// Optional display names, parallel to `values`.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        labels: Vec<String>,
    },
    Continuous {
        lo: f64,
        hi: f64,
    },
}

impl ParamDomain {
    pub fn discrete(values: impl Into<Vec<f64>>) -> Self {
        ParamDomain::Discrete {
            values: values.into(),
            labels: Vec::new(),
        }
    }

    fn contains(&self, x: f64) -> bool {
        match self {
            ParamDomain::Discrete { values, .. } => values.contains(&x),
            ParamDomain::Continuous { lo, hi } => *lo <= x && x <= *hi,
        }
    }

    fn points(&self, grid: usize) -> Vec<f64> {
        match self {
            ParamDomain::Discrete { values, .. } => values.clone(),
            ParamDomain::Continuous { lo, hi } => (0..grid)
                .map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64)
                .collect(),
        }
    }

    fn label(&self, x: f64) -> String {
        if let ParamDomain::Discrete { values, labels } = self {
            if let Some(i) = values.iter().position(|&v| v == x) {
                if let Some(l) = labels.get(i) {
                    return l.clone();
                }
            }
        }
        x.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityParam {
    pub name: String,
    pub domain: ParamDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityDomain {
    pub params: Vec<FidelityParam>,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
}

fn default_grid() -> usize {
    DEFAULT_GRID_POINTS
}

impl FidelityDomain {
    pub fn new(params: Vec<FidelityParam>) -> Result<Self, FidelityError> {
        let d = Self {
            params,
            grid_points: DEFAULT_GRID_POINTS,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), FidelityError> {
        if self.grid_points < 2 {
            return Err(FidelityError::InvalidDomain("grid_points".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for p in &self.params {
            let ok = names.insert(&p.name)
                && match &p.domain {
                    ParamDomain::Discrete { values, labels } => {
                        !values.is_empty()
                            && values.iter().all(|v| v.is_finite())
                            && (labels.is_empty() || labels.len() == values.len())
                    }
                    ParamDomain::Continuous { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
                };
            if !ok {
                return Err(FidelityError::InvalidDomain(p.name.clone()));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn check(&self, config: &Config) -> Result<(), FidelityError> {
        if let Some(k) = config.keys().find(|k| !self.params.iter().any(|p| &p.name == *k)) {
            return Err(FidelityError::UnknownParam(k.clone()));
        }
        for p in &self.params {
            let v = *config
                .get(&p.name)
                .ok_or_else(|| FidelityError::MissingParam(p.name.clone()))?;
            if !p.domain.contains(v) {
                return Err(FidelityError::OutOfDomain {
                    param: p.name.clone(),
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// Parameter values in domain order.
    pub fn vector(&self, config: &Config) -> Vec<f64> {
        self.params.iter().map(|p| config[&p.name]).collect()
    }

    /// Cartesian product of the (discretized) domains; the first parameter
    /// varies fastest.
    pub fn configurations(&self) -> Vec<Config> {
        let axes: Vec<Vec<f64>> = self.params.iter().map(|p| p.domain.points(self.grid_points)).collect();
        let total: usize = axes.iter().map(Vec::len).product();
        (0..total)
            .map(|mut i| {
                self.params
                    .iter()
                    .zip(&axes)
                    .map(|(p, ax)| {
                        let v = ax[i % ax.len()];
                        i /= ax.len();
                        (p.name.clone(), v)
                    })
                    .collect()
            })
            .collect()
    }

    /// `(20, low)` style rendering in domain order.
    pub fn format_config(&self, config: &Config) -> String {
        let parts: Vec<String> = self.params.iter().map(|p| p.domain.label(config[&p.name])).collect();
        format!("({})", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub config: Config,
    pub consumption: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStore {
    pub domain: FidelityDomain,
    pub samples: Vec<Sample>,
}

impl SampleStore {
    pub fn new(domain: FidelityDomain) -> Self {
        Self {
            domain,
            samples: Vec::new(),
        }
    }

    pub fn log_sample(&mut self, config: Config, consumption: BTreeMap<String, f64>) -> Result<(), FidelityError> {
        self.domain.check(&config)?;
        self.samples.push(Sample { config, consumption });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn resources(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&String> = self.samples.iter().flat_map(|s| s.consumption.keys()).collect();
        set.into_iter().cloned().collect()
    }

    /// `(parameter vector, measurement)` pairs for one resource.
    pub fn samples_for(&self, resource: &str) -> Vec<(Vec<f64>, f64)> {
        self.samples
            .iter()
            .filter_map(|s| s.consumption.get(resource).map(|&y| (self.domain.vector(&s.config), y)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceModel {
    pub resource_id: String,
    /// One per parameter, in domain order.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl ResourceModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// Least squares with an intercept via the normal equations. Columns are
/// scaled to unit max-norm and solved with a fully pivoted LU.
pub fn fit_ols(resource: &str, rows: &[(Vec<f64>, f64)], n_params: usize) -> Result<ResourceModel, FidelityError> {
    let p = n_params + 1;
    if rows.len() < p {
        return Err(FidelityError::InsufficientSamples {
            resource: resource.to_string(),
            samples: rows.len(),
            needed: p,
        });
    }
    let x = DMatrix::from_fn(rows.len(), p, |r, c| if c < n_params { rows[r].0[c] } else { 1.0 });
    let scale: Vec<f64> = (0..p).map(|c| x.column(c).amax()).collect();
    if scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return Err(FidelityError::RankDeficient(resource.to_string()));
    }
    let xs = DMatrix::from_fn(rows.len(), p, |r, c| x[(r, c)] / scale[c]);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let xtx = xs.transpose() * &xs;
    let xty = xs.transpose() * &y;
    let lu = xtx.full_piv_lu();
    let u = lu.u();
    let pivot_max = u[(0, 0)].abs();
    let tol = 1e-12 * pivot_max * p as f64;
    if (0..p).any(|i| u[(i, i)].abs() <= tol) {
        return Err(FidelityError::RankDeficient(resource.to_string()));
    }
    let rank_err = || FidelityError::RankDeficient(resource.to_string());
    let mut beta = lu.solve(&xty).ok_or_else(rank_err)?;
    // one step of iterative refinement
    let residual = xs.transpose() * (&y - &xs * &beta);
    beta += lu.solve(&residual).ok_or_else(rank_err)?;
    let coef: Vec<f64> = (0..p).map(|c| beta[c] / scale[c]).collect();
    Ok(ResourceModel {
        resource_id: resource.to_string(),
        coefficients: coef[..n_params].to_vec(),
        intercept: coef[n_params],
    })
}

/// One OLS model per resource seen in the store, sorted by resource id.
pub fn fit_models(store: &SampleStore) -> Result<Vec<ResourceModel>, FidelityError> {
    let n = store.domain.params.len();
    store
        .resources()
        .iter()
        .map(|r| fit_ols(r, &store.samples_for(r), n))
        .collect()
}

/// Configurations whose predicted consumption fits every limit. Resources
/// without a limit are unconstrained.
pub fn feasible_configs(models: &[ResourceModel], domain: &FidelityDomain, available: &BTreeMap<String, f64>) -> Vec<Config> {
    domain
        .configurations()
        .into_iter()
        .filter(|c| {
            let x = domain.vector(c);
            models
                .iter()
                .all(|m| available.get(&m.resource_id).is_none_or(|&lim| m.predict(&x) <= lim))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub value: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityFn {
    Table { entries: Vec<TableEntry> },
    Sigmoid { knee_lo: f64, knee_hi: f64 },
}

impl UtilityFn {
    pub fn validate(&self, name: &str) -> Result<(), FidelityError> {
        let ok = match self {
            UtilityFn::Table { entries } => entries.iter().all(|e| (0.0..=1.0).contains(&e.utility)),
            UtilityFn::Sigmoid { knee_lo, knee_hi } => knee_lo < knee_hi,
        };
        if ok {
            Ok(())
        } else {
            Err(FidelityError::InvalidDomain(name.to_string()))
        }
    }

    pub fn eval(&self, name: &str, x: f64) -> Result<f64, FidelityError> {
        match self {
            UtilityFn::Table { entries } => entries
                .iter()
                .find(|e| e.value == x)
                .map(|e| e.utility)
                .ok_or_else(|| FidelityError::NoTableEntry(name.to_string(), x)),
            UtilityFn::Sigmoid { knee_lo, knee_hi } => Ok(sigmoid_eval(*knee_lo, *knee_hi, x)),
        }
    }
}

/// Logistic curve with value 0.05 at `knee_lo` and 0.95 at `knee_hi`.
pub fn sigmoid_eval(knee_lo: f64, knee_hi: f64, x: f64) -> f64 {
    let k = 2.0 * 19f64.ln() / (knee_hi - knee_lo);
    let mid = 0.5 * (knee_lo + knee_hi);
    1.0 / (1.0 + (-k * (x - mid)).exp())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPolarity {
    /// `w` is the exponent; 0 neutralizes a parameter.
    #[default]
    Exponent,
    /// 0 is the most important; the exponent is `1 - w`.
    Inverted,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Weights {
    /// Parameters without an entry get weight 1 under either polarity's
    /// exponent, i.e. full influence.
    pub per_param: BTreeMap<String, f64>,
    pub polarity: WeightPolarity,
}

impl Weights {
    pub fn exponent(&self, param: &str) -> f64 {
        match self.per_param.get(param) {
            None => 1.0,
            Some(&w) => match self.polarity {
                WeightPolarity::Exponent => w,
                WeightPolarity::Inverted => 1.0 - w,
            },
        }
    }

    pub fn validate(&self) -> Result<(), FidelityError> {
        if self.per_param.values().all(|w| (0.0..=1.0).contains(w)) {
            Ok(())
        } else {
            Err(FidelityError::OutOfUnitRange("weight"))
        }
    }
}

pub fn config_utility(
    config: &Config,
    utilities: &BTreeMap<String, UtilityFn>,
    weights: &Weights,
    f_s: f64,
) -> Result<f64, FidelityError> {
    let mut prod = 1.0;
    for (name, &x) in config {
        let f = utilities
            .get(name)
            .ok_or_else(|| FidelityError::MissingUtility(name.clone()))?
            .eval(name, x)?;
        prod *= f.powf(weights.exponent(name));
    }
    Ok(f_s * prod)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Supplier {
    pub supplier_id: String,
    pub f_s: f64,
    pub domain: FidelityDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub supplier_id: String,
    pub config: Config,
    pub utility: f64,
    /// Suppliers whose configurations were scored before stopping.
    pub suppliers_evaluated: usize,
}

/// Visits suppliers by descending preference and stops once the next
/// preference falls below the best utility found, since utility never
/// exceeds `f_s`.
pub fn maximize_utility(
    suppliers: &[Supplier],
    utilities: &BTreeMap<String, UtilityFn>,
    weights: &Weights,
    feasible: &BTreeMap<String, Vec<Config>>,
) -> Result<Choice, FidelityError> {
    for s in suppliers {
        if !(0.0..=1.0).contains(&s.f_s) {
            return Err(FidelityError::OutOfUnitRange("f_s"));
        }
    }
    let mut order: Vec<&Supplier> = suppliers.iter().collect();
    order.sort_by(|a, b| b.f_s.total_cmp(&a.f_s).then_with(|| a.supplier_id.cmp(&b.supplier_id)));

    let mut best: Option<Choice> = None;
    let mut evaluated = 0;
    for s in order {
        if best.as_ref().is_some_and(|b| s.f_s < b.utility) {
            break;
        }
        evaluated += 1;
        for c in feasible.get(&s.supplier_id).map(Vec::as_slice).unwrap_or(&[]) {
            let u = config_utility(c, utilities, weights, s.f_s)?;
            if best.as_ref().is_none_or(|b| u > b.utility) {
                best = Some(Choice {
                    supplier_id: s.supplier_id.clone(),
                    config: c.clone(),
                    utility: u,
                    suppliers_evaluated: 0,
                });
            }
        }
    }
    best.map(|b| Choice {
        suppliers_evaluated: evaluated,
        ..b
    })
    .ok_or(FidelityError::NoConfiguration)
}
