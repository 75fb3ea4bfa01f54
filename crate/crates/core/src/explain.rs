//! Per-sample explanation records in physical units, ready for plotting.
//!
//! N-HiTS stack curves are scaled by the target's standard deviation but
//! not shifted, so the stack curves plus `offset` add up to the forecast.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnStats, WindowSet};
use crate::error::{Error, Result};
use crate::models::nhits::NHits;
use crate::models::tft::{feature_importance, FeatureImportance, TftLite};
use crate::models::{AnyModel, Batch, Forecaster};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ForecastValues {
    Point(Vec<f64>),
    /// One row per horizon step, one column per quantile level.
    Quantiles(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackCurve {
    pub label: String,
    pub pooling_size: usize,
    pub backcast: Vec<f64>,
    /// Point contribution (median column for quantile models).
    pub forecast: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    /// `horizon` rows of `encoder_len` weights.
    pub curve: Vec<Vec<f64>>,
    /// `encoder_len` rows of per-variable weights.
    pub variable_weights: Vec<Vec<f64>>,
    pub variables: Vec<String>,
    /// Over the whole evaluation set, descending.
    pub importances: Vec<FeatureImportance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub sample_index: usize,
    pub t0: DateTime<Utc>,
    pub encoder: Vec<f64>,
    pub target: Vec<f64>,
    pub forecast: ForecastValues,
    /// Target mean added back to the summed stack curves.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Vec<StackCurve>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionExport>,
}

fn denorm(stats: &ColumnStats, v: &[f64]) -> Vec<f64> {
    v.iter().map(|&z| stats.denormalize(z)).collect()
}

fn check_index(set: &WindowSet, i: usize) -> Result<()> {
    if i >= set.len() {
        return Err(Error::Data(format!(
            "sample {i} out of range; the set has {} windows",
            set.len()
        )));
    }
    Ok(())
}

fn forecast_values(point: &[f64], quantiles: Option<&[f64]>, horizon: usize, stats: &ColumnStats) -> ForecastValues {
    match quantiles {
        None => ForecastValues::Point(denorm(stats, point)),
        Some(q) => {
            let nq = q.len() / horizon;
            ForecastValues::Quantiles(q.chunks(nq).map(|row| denorm(stats, row)).collect())
        }
    }
}

pub fn nhits_explain<T: Scalar>(model: &NHits<T>, set: &WindowSet, index: usize, stats: &ColumnStats) -> Result<Explanation> {
    check_index(set, index)?;
    let batch = Batch::<T>::from_windows(set, &[index])?;
    let raw = model.forward_raw(&batch)?.remove(0);
    let bundle = model.forecast_batch(&batch)?.remove(0);
    let cfg = model.config();
    let nq = cfg.n_outputs();
    let median = cfg
        .output_quantiles
        .as_ref()
        .and_then(|q| q.median_index())
        .unwrap_or(0);
    let to64 = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
    let decomposition = raw
        .decomposition
        .stacks
        .iter()
        .enumerate()
        .map(|(s, st)| StackCurve {
            label: format!("stack {} (pooling {})", s + 1, st.pooling_size),
            pooling_size: st.pooling_size,
            backcast: st.backcast.iter().map(|v| v.to_f64_lossy() * stats.std).collect(),
            forecast: st
                .forecast
                .iter()
                .skip(median)
                .step_by(nq)
                .map(|v| v.to_f64_lossy() * stats.std)
                .collect(),
        })
        .collect();
    let sample = &set.samples[index];
    let quantiles = bundle.quantiles.as_deref().map(to64);
    Ok(Explanation {
        sample_index: index,
        t0: sample.t0,
        encoder: denorm(stats, &set.encoder_target(sample)),
        target: denorm(stats, &sample.target),
        forecast: forecast_values(&to64(&bundle.point), quantiles.as_deref(), set.horizon, stats),
        offset: Some(stats.mean),
        decomposition: Some(decomposition),
        attention: None,
    })
}

/// `importances` is computed once over a reference set by the caller.
pub fn tft_explain<T: Scalar>(
    model: &TftLite<T>,
    set: &WindowSet,
    index: usize,
    stats: &ColumnStats,
    importances: Vec<FeatureImportance>,
) -> Result<Explanation> {
    check_index(set, index)?;
    let bundle = model.forecast(set, &[index])?.remove(0);
    let rec = bundle
        .attention
        .as_ref()
        .ok_or_else(|| Error::Data("model produced no attention record".into()))?;
    let to64 = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
    let sample = &set.samples[index];
    let quantiles = bundle.quantiles.as_deref().map(to64);
    Ok(Explanation {
        sample_index: index,
        t0: sample.t0,
        encoder: denorm(stats, &set.encoder_target(sample)),
        target: denorm(stats, &sample.target),
        forecast: forecast_values(&to64(&bundle.point), quantiles.as_deref(), set.horizon, stats),
        offset: None,
        decomposition: None,
        attention: Some(AttentionExport {
            curve: rec.attention_rows().map(to64).collect(),
            variable_weights: rec.variable_rows().map(to64).collect(),
            variables: model.config().variable_names(),
            importances,
        }),
    })
}

/// Explanations for `indices`; baseline models only get the forecast.
pub fn explain<T: Scalar>(model: &AnyModel<T>, set: &WindowSet, indices: &[usize], stats: &ColumnStats, batch_size: usize) -> Result<Vec<Explanation>> {
    match model {
        AnyModel::Nhits(m) => indices.iter().map(|&i| nhits_explain(m, set, i, stats)).collect(),
        AnyModel::TftLite(m) => {
            let imp = feature_importance(m, set, batch_size)?;
            indices
                .iter()
                .map(|&i| tft_explain(m, set, i, stats, imp.clone()))
                .collect()
        }
        AnyModel::Baseline(b) => indices
            .iter()
            .map(|&i| {
                check_index(set, i)?;
                let bundle = Forecaster::<T>::forecast(b, set, &[i])?.remove(0);
                let sample = &set.samples[i];
                Ok(Explanation {
                    sample_index: i,
                    t0: sample.t0,
                    encoder: denorm(stats, &set.encoder_target(sample)),
                    target: denorm(stats, &sample.target),
                    forecast: ForecastValues::Point(
                        bundle.point.iter().map(|v| stats.denormalize(v.to_f64_lossy())).collect(),
                    ),
                    offset: None,
                    decomposition: None,
                    attention: None,
                })
            })
            .collect(),
    }
}
