//! Source-side update statistics and the probability that a cached copy is
//! still current.
//!
//! Inter-update times are modelled as normally distributed with mean `mtbu`
//! and standard deviation `stdv_mtbu`. The probability that an object has been
//! modified after `t` time units since its last source write is the normal CDF
//! evaluated at `(t - mtbu) / stdv_mtbu`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ObjectId, Time};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FreshnessError {
    #[error("update at {t} is not after the last recorded update at {last}")]
    NonMonotonic { t: Time, last: Time },
    #[error("at least two inter-update intervals are required, have {0}")]
    InsufficientHistory(u64),
    #[error("evaluation time {now} precedes the last update at {last}")]
    BeforeLastUpdate { now: Time, last: Time },
    #[error("qos {0} outside [0, 1]")]
    QosOutOfRange(f64),
}

/// Summary of an object's update history, as shipped with cached copies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreshnessStats {
    pub mtbu: f64,
    pub stdv_mtbu: f64,
    pub t_last_update: Time,
    pub n_intervals: u64,
}

/// Ordered record of source writes for one object.
///
/// Interval statistics are maintained incrementally (Welford) so that
/// [`UpdateLog::stats`] is O(1).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    update_times: Vec<Time>,
    mean: f64,
    m2: f64,
}

impl UpdateLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update_times(&self) -> &[Time] {
        &self.update_times
    }

    pub fn last_update(&self) -> Option<Time> {
        self.update_times.last().copied()
    }

    pub fn n_intervals(&self) -> u64 {
        self.update_times.len().saturating_sub(1) as u64
    }

    /// Appends a source write. Timestamps must be strictly increasing.
    pub fn record_update(&mut self, t: Time) -> Result<(), FreshnessError> {
        if let Some(last) = self.last_update() {
            if !(t > last) {
                return Err(FreshnessError::NonMonotonic { t, last });
            }
            let interval = t - last;
            let n = self.n_intervals() as f64 + 1.0;
            let delta = interval - self.mean;
            self.mean += delta / n;
            self.m2 += delta * (interval - self.mean);
        }
        self.update_times.push(t);
        Ok(())
    }

    /// Current statistics, or `None` for an empty log.
    ///
    /// The standard deviation is the population form (divides by the number
    /// of intervals).
    pub fn stats(&self) -> Option<FreshnessStats> {
        let t_last_update = self.last_update()?;
        let n = self.n_intervals();
        let (mtbu, stdv_mtbu) = if n == 0 {
            (0.0, 0.0)
        } else {
            (self.mean, (self.m2.max(0.0) / n as f64).sqrt())
        };
        Some(FreshnessStats {
            mtbu,
            stdv_mtbu,
            t_last_update,
            n_intervals: n,
        })
    }
}

/// Standard normal CDF.
pub fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Probability that the object has been written since `stats.t_last_update`.
pub fn p_modified(stats: &FreshnessStats, now: Time) -> Result<f64, FreshnessError> {
    if stats.n_intervals < 2 {
        return Err(FreshnessError::InsufficientHistory(stats.n_intervals));
    }
    if now < stats.t_last_update {
        return Err(FreshnessError::BeforeLastUpdate {
            now,
            last: stats.t_last_update,
        });
    }
    let elapsed = now - stats.t_last_update;
    if stats.stdv_mtbu == 0.0 {
        // Step at the mean: limit of the normal family as the spread vanishes.
        return Ok(if elapsed < stats.mtbu { 0.0 } else { 1.0 });
    }
    let z = (elapsed - stats.mtbu) / stats.stdv_mtbu;
    Ok(standard_normal_cdf(z).clamp(0.0, 1.0))
}

pub fn p_not_modified(stats: &FreshnessStats, now: Time) -> Result<f64, FreshnessError> {
    p_modified(stats, now).map(|p| 1.0 - p)
}

/// P_NM used when deciding whether to serve a copy. Copies whose snapshot
/// lacks enough history score 0, so only `qos = 0` accepts them.
pub fn serve_probability(stats: Option<&FreshnessStats>, now: Time) -> f64 {
    stats
        .and_then(|s| p_not_modified(s, now).ok())
        .unwrap_or(0.0)
}

/// A consumer's minimum acceptable probability of freshness.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QosSetting(f64);

impl QosSetting {
    pub const ANY: QosSetting = QosSetting(0.0);
    pub const SOURCE_ONLY: QosSetting = QosSetting(1.0);

    pub fn new(qos: f64) -> Result<Self, FreshnessError> {
        if (0.0..=1.0).contains(&qos) {
            Ok(Self(qos))
        } else {
            Err(FreshnessError::QosOutOfRange(qos))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QosSetting {
    type Error = FreshnessError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<QosSetting> for f64 {
    fn from(q: QosSetting) -> f64 {
        q.0
    }
}

/// A cached copy is acceptable when its P_NM is at least the QoS setting.
pub fn accepts(qos: QosSetting, p_nm: f64) -> bool {
    p_nm >= qos.0
}

/// Per-object QoS settings for one user, with a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosMap {
    pub default: QosSetting,
    pub per_object: BTreeMap<ObjectId, QosSetting>,
}

impl QosMap {
    pub fn uniform(qos: QosSetting) -> Self {
        Self {
            default: qos,
            per_object: BTreeMap::new(),
        }
    }

    pub fn get(&self, object: ObjectId) -> QosSetting {
        self.per_object.get(&object).copied().unwrap_or(self.default)
    }
}

impl Default for QosMap {
    fn default() -> Self {
        Self::uniform(QosSetting::ANY)
    }
}
