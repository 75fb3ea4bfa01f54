//! Simulated sensor failure: zero out part of a sensor's value
//! distribution (or a stretch of its history) and measure how much the
//! validation error grows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_windows, NormStats, SeriesTable, WindowConfig};
use crate::error::{Error, Result};
use crate::metrics::PointMetrics;
use crate::models::Forecaster;
use crate::report::{evaluate, fnv1a64, MetricUnits};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    /// Zero a band of the ranked unique values wherever they occur.
    #[default]
    ValueRank,
    /// Zero a contiguous stretch of time steps.
    TimeWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    /// Sensor names or cluster labels.
    pub targets: Vec<String>,
    /// Start percentile drawn uniformly from this range.
    pub start_percentile_range: [f64; 2],
    pub span_percent: f64,
    pub seed: u64,
    pub mode: CorruptionMode,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            targets: Vec::new(),
            start_percentile_range: [0.0, 10.0],
            span_percent: 90.0,
            seed: 0,
            mode: CorruptionMode::ValueRank,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.start_percentile_range;
        if !(0.0 <= lo && lo <= hi && hi <= 100.0) {
            return Err(Error::Config(format!(
                "start_percentile_range must satisfy 0 <= lo <= hi <= 100, got [{lo}, {hi}]"
            )));
        }
        if !(self.span_percent >= 0.0 && hi + self.span_percent <= 100.0) {
            return Err(Error::Config(format!(
                "start + span must stay within 100, got {hi} + {}",
                self.span_percent
            )));
        }
        Ok(())
    }

    fn draw_start(&self, rng: &mut ChaCha8Rng) -> f64 {
        let [lo, hi] = self.start_percentile_range;
        if hi > lo {
            rng.gen_range(lo..=hi)
        } else {
            lo
        }
    }
}

/// A resolved corruption of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CorruptionPlan {
    /// `zeroed` holds the selected unique values in ascending order.
    ValueRank { start_percent: f64, zeroed: Vec<f64> },
    TimeWindow { start: usize, end: usize },
}

impl CorruptionPlan {
    pub fn apply(&self, series: &[f64]) -> Vec<f64> {
        match self {
            CorruptionPlan::ValueRank { zeroed, .. } => series
                .iter()
                .map(|&v| {
                    if zeroed.binary_search_by(|z| z.total_cmp(&v)).is_ok() {
                        0.0
                    } else {
                        v
                    }
                })
                .collect(),
            CorruptionPlan::TimeWindow { start, end } => series
                .iter()
                .enumerate()
                .map(|(i, &v)| if (*start..*end).contains(&i) { 0.0 } else { v })
                .collect(),
        }
    }

    pub fn n_zeroed_values(&self) -> usize {
        match self {
            CorruptionPlan::ValueRank { zeroed, .. } => zeroed.len(),
            CorruptionPlan::TimeWindow { start, end } => end - start,
        }
    }
}

/// Sorted unique values. Signed zeros are merged so every value maps to
/// exactly one rank.
pub fn unique_sorted(series: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = series.iter().map(|&v| if v == 0.0 { 0.0 } else { v }).collect();
    u.sort_by(f64::total_cmp);
    u.dedup_by(|a, b| a.total_cmp(b).is_eq());
    u
}

/// Rank band for a given start percentile: ranks `r` with
/// `start <= 100 r / |U| < start + span`.
pub fn plan_with_start(series: &[f64], start_percent: f64, span_percent: f64, mode: CorruptionMode) -> CorruptionPlan {
    match mode {
        CorruptionMode::ValueRank => {
            let u = unique_sorted(series);
            let n = u.len() as f64;
            let zeroed = u
                .into_iter()
                .enumerate()
                .filter(|(r, _)| {
                    let pct = 100.0 * *r as f64;
                    pct >= start_percent * n && pct < (start_percent + span_percent) * n
                })
                .map(|(_, v)| v)
                .collect();
            CorruptionPlan::ValueRank {
                start_percent,
                zeroed,
            }
        }
        CorruptionMode::TimeWindow => {
            let n = series.len() as f64;
            let start = ((start_percent / 100.0 * n).floor() as usize).min(series.len());
            let end = (((start_percent + span_percent) / 100.0 * n).floor() as usize).min(series.len());
            CorruptionPlan::TimeWindow { start, end }
        }
    }
}

/// Draws the start percentile from `rng` and resolves the plan.
pub fn plan_corruption(series: &[f64], spec: &CorruptionSpec, rng: &mut ChaCha8Rng) -> Result<CorruptionPlan> {
    spec.validate()?;
    if series.is_empty() {
        return Err(Error::Empty("series to corrupt"));
    }
    let p = spec.draw_start(rng);
    Ok(plan_with_start(series, p, spec.span_percent, spec.mode))
}

/// Plans with `spec.seed` and applies in one go.
pub fn corrupt_column(series: &[f64], spec: &CorruptionSpec) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(plan_corruption(series, spec, &mut rng)?.apply(series))
}

/// Expands cluster labels to their members, keeping plain sensor names.
pub fn resolve_targets(table: &SeriesTable, targets: &[String]) -> Result<Vec<String>> {
    let clusters = table.clusters();
    let mut out: Vec<String> = Vec::new();
    for t in targets {
        let members: Vec<String> = if clusters.contains(t) {
            table.cluster_members(t).into_iter().map(String::from).collect()
        } else if table.column(t).is_some() {
            vec![t.clone()]
        } else {
            return Err(Error::UnknownCluster {
                name: t.clone(),
                known: clusters.clone(),
            });
        };
        for m in members {
            if m == table.target_name() {
                return Err(Error::Config(format!(
                    "the forecast target {m:?} cannot be corrupted"
                )));
            }
            if !out.contains(&m) {
                out.push(m);
            }
        }
    }
    Ok(out)
}

/// Corrupts the named columns of a raw table. Each column draws its start
/// percentile from its own stream of `spec.seed`.
pub fn corrupt_table(table: &SeriesTable, columns: &[String], spec: &CorruptionSpec) -> Result<(SeriesTable, Vec<ColumnCorruption>)> {
    let mut out = table.clone();
    let mut applied = Vec::with_capacity(columns.len());
    for name in columns {
        let col = out
            .column_mut(name)
            .ok_or_else(|| Error::Data(format!("no column {name:?}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(fnv1a64(name.as_bytes()));
        let plan = plan_corruption(col, spec, &mut rng)?;
        *col = plan.apply(col);
        applied.push(ColumnCorruption {
            column: name.clone(),
            plan,
        });
    }
    Ok((out, applied))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnCorruption {
    pub column: String,
    pub plan: CorruptionPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Sensor names or cluster labels; empty means no corruption.
    pub targets: Vec<String>,
}

impl Scenario {
    pub fn cluster(label: &str) -> Self {
        Self {
            name: label.to_string(),
            targets: vec![label.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub name: String,
    pub corrupted_sensors: Vec<String>,
    pub clean_mae: f64,
    pub clean_rmse: f64,
    pub corrupted_mae: f64,
    pub corrupted_rmse: f64,
    pub mae_factor: f64,
    pub rmse_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationReport {
    pub units: MetricUnits,
    pub mode: CorruptionMode,
    pub clean: PointMetrics,
    pub scenarios: Vec<ScenarioResult>,
}

/// Evaluates `model` on the raw validation table, then once per scenario
/// with the scenario's sensors corrupted. Normalization always uses the
/// training `stats`, as a deployed model would.
#[allow(clippy::too_many_arguments)]
pub fn cluster_shutdown_eval<T: Scalar, M: Forecaster<T> + ?Sized>(
    model: &M,
    raw_val: &SeriesTable,
    stats: &NormStats,
    windows: &WindowConfig,
    scenarios: &[Scenario],
    spec: &CorruptionSpec,
    units: MetricUnits,
    batch_size: usize,
) -> Result<DegradationReport> {
    spec.validate()?;
    let target_stats = *stats
        .get(raw_val.target_name())
        .ok_or_else(|| Error::Data("normalization stats lack the target column".into()))?;
    let score = |table: &SeriesTable| -> Result<PointMetrics> {
        let set = make_windows(&stats.normalize(table)?, windows)?;
        evaluate(model, &set, &target_stats, units, batch_size)
    };
    let clean = score(raw_val)?;
    let mut results = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        let columns = resolve_targets(raw_val, &sc.targets)?;
        let (table, _) = corrupt_table(raw_val, &columns, spec)?;
        let m = score(&table)?;
        results.push(ScenarioResult {
            name: sc.name.clone(),
            corrupted_sensors: columns,
            clean_mae: clean.mae,
            clean_rmse: clean.rmse,
            corrupted_mae: m.mae,
            corrupted_rmse: m.rmse,
            mae_factor: m.mae / clean.mae,
            rmse_factor: m.rmse / clean.rmse,
        });
    }
    Ok(DegradationReport {
        units,
        mode: spec.mode,
        clean,
        scenarios: results,
    })
}
