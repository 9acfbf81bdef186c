//! Subcommand implementations for the `aircell` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use aircell_core::broadcast_plan::PartitionReport;
use aircell_core::fidelity::{fit_models, ResourceModel, SampleStore};
use aircell_core::scenario::{parse_scenario, Scenario, ScenarioError};
use aircell_core::sim::{self, Metrics, SimError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::statistics::Statistics;
use thiserror::Error;

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("output directory {0} is not writable")]
    Unwritable(PathBuf),
    #[error("{path}: {message}")]
    BadInput { path: PathBuf, message: String },
    #[error("schema mismatch: {0} vs {1}")]
    SchemaMismatch(String, String),
    #[error("invalid seed list: {0}")]
    Seeds(String),
    #[error("{failed} of {total} runs failed; partial outputs written")]
    Partial { failed: usize, total: usize },
    #[error("the cell is disabled or publishes nothing; no program to dump")]
    NoProgram,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub scenario: PathBuf,
    /// Empty means the scenario's own seed.
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub formats: Vec<Format>,
}

/// Parses `1,2,5-8` style seed lists (ranges inclusive).
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || CliError::Seeds(part.to_string());
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(CliError::Seeds(text.to_string()));
    }
    Ok(seeds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub stdev: f64,
    /// One value per successful seed, in seed order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_id: String,
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub partial: bool,
    pub failed: Vec<FailedRun>,
    pub metrics: BTreeMap<String, MetricStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub summary: RunSummary,
}

fn ensure_writable(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|_| CliError::Unwritable(dir.to_path_buf()))?;
    let probe = dir.join(".aircell-write-probe");
    fs::write(&probe, b"").map_err(|_| CliError::Unwritable(dir.to_path_buf()))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

fn aggregate(runs: &[(u64, Metrics)]) -> BTreeMap<String, MetricStats> {
    let mut table: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (_, m) in runs {
        for (k, v) in m.summary() {
            table.entry(k).or_default().push(v);
        }
    }
    table
        .into_iter()
        .map(|(k, values)| {
            let mean = values.iter().mean();
            let stdev = if values.len() > 1 { values.iter().std_dev() } else { 0.0 };
            (k, MetricStats { mean, stdev, values })
        })
        .collect()
}

/// Runs every seed in parallel, then writes one metrics file per seed and
/// format plus `summary.json` and `summary.csv`.
pub fn run_command(manifest: &RunManifest) -> Result<RunReport, CliError> {
    let scenario = parse_scenario(&manifest.scenario)?;
    ensure_writable(&manifest.out)?;
    let seeds = if manifest.seeds.is_empty() {
        vec![scenario.seed]
    } else {
        manifest.seeds.clone()
    };
    let formats = if manifest.formats.is_empty() {
        vec![Format::Csv]
    } else {
        let mut f = manifest.formats.clone();
        f.sort();
        f.dedup();
        f
    };

    let results: Vec<(u64, Result<Metrics, SimError>)> = seeds
        .par_iter()
        .map(|&seed| {
            let s = Scenario {
                seed,
                ..scenario.clone()
            };
            (seed, sim::run(&s))
        })
        .collect();

    let mut files = Vec::new();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(m) => {
                for f in &formats {
                    let path = manifest.out.join(format!("metrics_seed{seed}.{}", f.ext()));
                    let text = match f {
                        Format::Csv => m.to_csv(),
                        Format::Json => m.to_json(),
                    };
                    write(&path, &text)?;
                    files.push(path);
                }
                ok.push((seed, m));
            }
            Err(e) => failed.push(FailedRun {
                seed,
                error: e.to_string(),
            }),
        }
    }

    let summary = RunSummary {
        schema_id: scenario.schema_id.clone(),
        scenario: manifest.scenario.display().to_string(),
        seeds: ok.iter().map(|(s, _)| *s).collect(),
        partial: !failed.is_empty(),
        failed,
        metrics: aggregate(&ok),
    };
    write(
        &manifest.out.join(SUMMARY_FILE),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    let mut csv = String::from("metric,mean,stdev,n\n");
    for (k, v) in &summary.metrics {
        csv.push_str(&format!("{k},{},{},{}\n", v.mean, v.stdev, v.values.len()));
    }
    write(&manifest.out.join("summary.csv"), &csv)?;

    if summary.partial {
        return Err(CliError::Partial {
            failed: summary.failed.len(),
            total: seeds.len(),
        });
    }
    Ok(RunReport { files, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    /// `b - a` of the means.
    pub mean_delta: f64,
    /// Per-seed `b - a` over seeds present in both runs.
    pub paired_deltas: Vec<f64>,
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    /// Two-sided exact sign-test p-value (1 when every pair ties).
    pub sign_test_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_id: String,
    pub paired_seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MetricDelta>,
}

fn read_summary(dir: &Path) -> Result<RunSummary, CliError> {
    let path = if dir.is_dir() { dir.join(SUMMARY_FILE) } else { dir.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| CliError::BadInput {
        path,
        message: e.to_string(),
    })
}

pub fn sign_test(positive: usize, negative: usize) -> f64 {
    let n = positive + negative;
    if n == 0 {
        return 1.0;
    }
    let k = positive.min(negative) as u64;
    let tail = Binomial::new(0.5, n as u64).expect("valid binomial").cdf(k);
    (2.0 * tail).min(1.0)
}

/// Per-metric deltas `b - a` with sign tests over paired seeds.
pub fn compare_command(a: &Path, b: &Path) -> Result<Comparison, CliError> {
    let sa = read_summary(a)?;
    let sb = read_summary(b)?;
    if sa.schema_id != sb.schema_id {
        return Err(CliError::SchemaMismatch(sa.schema_id, sb.schema_id));
    }
    let index = |s: &RunSummary| -> BTreeMap<u64, usize> { s.seeds.iter().enumerate().map(|(i, &x)| (x, i)).collect() };
    let (ia, ib) = (index(&sa), index(&sb));
    let paired: Vec<u64> = ia.keys().filter(|k| ib.contains_key(k)).copied().collect();
    let mut metrics = BTreeMap::new();
    for (name, ma) in &sa.metrics {
        let Some(mb) = sb.metrics.get(name) else {
            continue;
        };
        let deltas: Vec<f64> = paired.iter().map(|s| mb.values[ib[s]] - ma.values[ia[s]]).collect();
        let positive = deltas.iter().filter(|d| **d > 0.0).count();
        let negative = deltas.iter().filter(|d| **d < 0.0).count();
        metrics.insert(
            name.clone(),
            MetricDelta {
                mean_delta: mb.mean - ma.mean,
                ties: deltas.len() - positive - negative,
                sign_test_p: sign_test(positive, negative),
                paired_deltas: deltas,
                positive,
                negative,
            },
        );
    }
    Ok(Comparison {
        schema_id: sa.schema_id,
        paired_seeds: paired,
        metrics,
    })
}

pub fn comparison_csv(c: &Comparison) -> String {
    let mut s = String::from("metric,mean_delta,positive,negative,ties,sign_test_p\n");
    for (k, d) in &c.metrics {
        s.push_str(&format!(
            "{k},{},{},{},{},{}\n",
            d.mean_delta, d.positive, d.negative, d.ties, d.sign_test_p
        ));
    }
    s
}

/// Slot table of the scenario's initial broadcast program.
pub fn dump_program(scenario: &Path, format: Format) -> Result<String, CliError> {
    let s = parse_scenario(scenario)?;
    if !s.cell.enabled {
        return Err(CliError::NoProgram);
    }
    let (_, program) = sim::plan_cell(&s, &sim::initial_demands(&s))?;
    let program = program.ok_or(CliError::NoProgram)?;
    Ok(match format {
        Format::Csv => program.dump_table(),
        Format::Json => serde_json::to_string_pretty(&program).expect("program serializes"),
    })
}

/// Partition report for the scenario's expected demand.
pub fn plan_report(scenario: &Path) -> Result<PartitionReport, CliError> {
    let s = parse_scenario(scenario)?;
    let (report, _) = sim::plan_cell(&s, &sim::initial_demands(&s))?;
    Ok(report)
}

pub fn plan_csv(report: &PartitionReport) -> String {
    let mut s = String::from("k,b_b,b_d,normalized_access,chosen\n");
    for step in &report.steps {
        let access = step.access.map(|a| a.normalized.to_string()).unwrap_or_default();
        let chosen = step.k == report.partition.k();
        s.push_str(&format!("{},{},{},{access},{chosen}\n", step.k, step.b_b, step.b_d));
    }
    s
}

/// Fits one linear model per resource from a JSON sample log.
pub fn fit_command(samples: &Path) -> Result<Vec<ResourceModel>, CliError> {
    let text = fs::read_to_string(samples).map_err(io_err(samples))?;
    let mut store: SampleStore = serde_json::from_str(&text).map_err(|e| CliError::BadInput {
        path: samples.to_path_buf(),
        message: e.to_string(),
    })?;
    let bad = |message: String| CliError::BadInput {
        path: samples.to_path_buf(),
        message,
    };
    store.domain.validate().map_err(|e| bad(e.to_string()))?;
    let raw = std::mem::take(&mut store.samples);
    for (i, s) in raw.into_iter().enumerate() {
        store
            .log_sample(s.config, s.consumption)
            .map_err(|e| bad(format!("sample {i}: {e}")))?;
    }
    fit_models(&store).map_err(|e| bad(e.to_string()))
}
