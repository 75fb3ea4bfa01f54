//! Evaluation on window sets, evaluation reports and provenance digests.

use serde::{Deserialize, Serialize};

use crate::data::{ColumnStats, SeriesTable, WindowSet};
use crate::error::Result;
use crate::metrics::{point_metrics, PointMetrics};
use crate::models::{Forecaster, ModelKind};
use crate::scalar::Scalar;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn digest_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

/// Digest of the JSON form of `value` with object keys sorted.
pub fn config_digest<S: Serialize>(value: &S) -> Result<String> {
    // serde_json's default map is ordered by key, so a round trip through
    // `Value` canonicalizes field order.
    let v = serde_json::to_value(value)?;
    Ok(digest_hex(&serde_json::to_vec(&v)?))
}

pub fn dataset_digest(table: &SeriesTable) -> String {
    digest_hex(&table.canonical_bytes())
}

/// Units the metrics are reported in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricUnits {
    #[default]
    Physical,
    Normalized,
}

/// Point forecasts (median column for quantile models) against the true
/// horizon for every sample in `set`, flattened sample-major.
pub fn collect_forecasts<T: Scalar, M: Forecaster<T> + ?Sized>(
    model: &M,
    set: &WindowSet,
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut preds = Vec::with_capacity(set.len() * set.horizon);
    let mut targets = Vec::with_capacity(set.len() * set.horizon);
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        for (bundle, &i) in model.forecast(set, chunk)?.into_iter().zip(chunk) {
            preds.extend(bundle.point.iter().map(|v| v.to_f64_lossy()));
            targets.extend_from_slice(&set.samples[i].target);
        }
    }
    Ok((preds, targets))
}

/// MAE and RMSE over all forecast points of `set`. With physical units the
/// forecasts and targets are mapped back through the target's stats.
pub fn evaluate<T: Scalar, M: Forecaster<T> + ?Sized>(
    model: &M,
    set: &WindowSet,
    target_stats: &ColumnStats,
    units: MetricUnits,
    batch_size: usize,
) -> Result<PointMetrics> {
    let (mut p, mut y) = collect_forecasts(model, set, batch_size)?;
    if units == MetricUnits::Physical {
        p.iter_mut().for_each(|v| *v = target_stats.denormalize(*v));
        y.iter_mut().for_each(|v| *v = target_stats.denormalize(*v));
    }
    point_metrics(&p, &y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub loss: String,
    pub mae: f64,
    pub rmse: f64,
    pub size_bytes: u64,
    /// Wall-clock dependent; excluded from reproducibility comparisons.
    pub latency_ms_per_sample: f64,
    pub config_digest: String,
    pub dataset_digest: String,
    pub units: MetricUnits,
    pub n_samples: usize,
    /// Choices the numbers depend on, e.g. the MASE denominator.
    #[serde(default)]
    pub notes: serde_json::Map<String, serde_json::Value>,
}

impl EvalReport {
    /// The fields that must match across identical runs.
    pub fn numeric_fields(&self) -> (f64, f64, u64, &str, &str) {
        (
            self.mae,
            self.rmse,
            self.size_bytes,
            &self.config_digest,
            &self.dataset_digest,
        )
    }
}
