//! Forecasters sharing one batch layout and one output bundle.

pub mod baseline;
mod layers;
pub mod nhits;
pub mod tft;

use serde::{Deserialize, Serialize};

pub use layers::{dropout, GatedResidual, Linear, Mode};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::losses::naive_scale;
use crate::scalar::Scalar;
use baseline::{Baseline, BaselineConfig};
use nhits::{NHits, NHitsConfig, StackDecomposition};
use tft::{AttentionRecord, TftConfig, TftLite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Baseline,
    Nhits,
    TftLite,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Nhits => "nhits",
            ModelKind::TftLite => "tft-lite",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "nhits" | "n-hits" => Ok(ModelKind::Nhits),
            "tft-lite" | "tft" => Ok(ModelKind::TftLite),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?}; expected baseline, nhits or tft-lite"
            ))),
        }
    }
}

/// Window samples gathered into dense row-major arrays.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub size: usize,
    pub encoder_len: usize,
    pub horizon: usize,
    pub n_features: usize,
    pub n_known: usize,
    /// `[B, L, F]`, target history in feature 0.
    pub encoder: Vec<T>,
    /// `[B, L]`.
    pub enc_target: Vec<T>,
    /// `[B, F - 1, L]`: covariates with time as the last axis.
    pub covariates: Vec<T>,
    /// `[B, L, K]`.
    pub known_past: Vec<T>,
    /// `[B, H, K]`.
    pub known_future: Vec<T>,
    /// `[B, H]`.
    pub target: Vec<T>,
    /// Per-sample MASE denominators.
    pub scales: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_windows(set: &WindowSet, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let (l, h, f, k) = (set.encoder_len, set.horizon, set.n_features(), set.n_known());
        let b = idx.len();
        let mut out = Batch {
            size: b,
            encoder_len: l,
            horizon: h,
            n_features: f,
            n_known: k,
            encoder: Vec::with_capacity(b * l * f),
            enc_target: Vec::with_capacity(b * l),
            covariates: Vec::with_capacity(b * l * (f - 1)),
            known_past: Vec::with_capacity(b * l * k),
            known_future: Vec::with_capacity(b * h * k),
            target: Vec::with_capacity(b * h),
            scales: Vec::with_capacity(b),
        };
        for &i in idx {
            let s = set
                .samples
                .get(i)
                .ok_or_else(|| Error::Data(format!("sample index {i} out of range")))?;
            let lit = |v: &f64| T::lit(*v);
            out.encoder.extend(s.encoder.iter().map(lit));
            let tgt: Vec<T> = s.encoder.iter().step_by(f).map(lit).collect();
            out.scales.push(naive_scale(&tgt));
            out.enc_target.extend(tgt);
            for j in 1..f {
                out.covariates
                    .extend(s.encoder.iter().skip(j).step_by(f).map(lit));
            }
            out.known_past.extend(s.known_past.iter().map(lit));
            out.known_future.extend(s.known_future.iter().map(lit));
            out.target.extend(s.target.iter().map(lit));
        }
        Ok(out)
    }

    pub fn n_covariates(&self) -> usize {
        self.n_features - 1
    }
}

/// Output for one sample, in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastBundle<T> {
    /// Point forecast (the 0.5 column for quantile models, after sorting rows).
    pub point: Vec<T>,
    /// Row-major `H x Q`, rows sorted ascending.
    pub quantiles: Option<Vec<T>>,
    pub backcast: Option<Vec<T>>,
    pub decomposition: Option<StackDecomposition<T>>,
    pub attention: Option<AttentionRecord<T>>,
}

impl<T: Scalar> ForecastBundle<T> {
    pub fn point_only(point: Vec<T>) -> Self {
        Self {
            point,
            quantiles: None,
            backcast: None,
            decomposition: None,
            attention: None,
        }
    }
}

pub trait Forecaster<T: Scalar> {
    fn kind(&self) -> ModelKind;

    fn forecast_batch(&self, batch: &Batch<T>) -> Result<Vec<ForecastBundle<T>>>;

    fn forecast(&self, set: &WindowSet, idx: &[usize]) -> Result<Vec<ForecastBundle<T>>> {
        self.forecast_batch(&Batch::from_windows(set, idx)?)
    }
}

/// Forecasters with gradient-trained parameters.
pub trait Trainable<T: Scalar>: Forecaster<T> {
    fn params(&self) -> &ParamStore<T>;

    fn params_mut(&mut self) -> &mut ParamStore<T>;

    /// Training objective on one batch, recorded in `g`.
    fn batch_loss(&self, g: &mut Graph<T>, batch: &Batch<T>, mode: &mut Mode<'_>) -> Result<Var>;
}

/// Architecture block of a run; the tag names the model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    Baseline(BaselineConfig),
    Nhits(NHitsConfig),
    TftLite(TftConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Baseline(_) => ModelKind::Baseline,
            ModelConfig::Nhits(_) => ModelKind::Nhits,
            ModelConfig::TftLite(_) => ModelKind::TftLite,
        }
    }
}

/// Any of the three model kinds.
#[derive(Debug, Clone)]
pub enum AnyModel<T> {
    Baseline(Baseline),
    Nhits(NHits<T>),
    TftLite(TftLite<T>),
}

impl<T: Scalar> AnyModel<T> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        Ok(match cfg {
            ModelConfig::Baseline(c) => AnyModel::Baseline(Baseline::new(c)?),
            ModelConfig::Nhits(c) => AnyModel::Nhits(NHits::new(c)?),
            ModelConfig::TftLite(c) => AnyModel::TftLite(TftLite::new(c)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            AnyModel::Baseline(m) => ModelConfig::Baseline(m.cfg),
            AnyModel::Nhits(m) => ModelConfig::Nhits(m.config().clone()),
            AnyModel::TftLite(m) => ModelConfig::TftLite(m.config().clone()),
        }
    }

    pub fn params(&self) -> Option<&ParamStore<T>> {
        match self {
            AnyModel::Baseline(_) => None,
            AnyModel::Nhits(m) => Some(m.params()),
            AnyModel::TftLite(m) => Some(m.params()),
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut ParamStore<T>> {
        match self {
            AnyModel::Baseline(_) => None,
            AnyModel::Nhits(m) => Some(m.params_mut()),
            AnyModel::TftLite(m) => Some(m.params_mut()),
        }
    }
}

impl<T: Scalar> Forecaster<T> for AnyModel<T> {
    fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Baseline(_) => ModelKind::Baseline,
            AnyModel::Nhits(_) => ModelKind::Nhits,
            AnyModel::TftLite(_) => ModelKind::TftLite,
        }
    }

    fn forecast_batch(&self, batch: &Batch<T>) -> Result<Vec<ForecastBundle<T>>> {
        match self {
            AnyModel::Baseline(m) => m.forecast_batch(batch),
            AnyModel::Nhits(m) => m.forecast_batch(batch),
            AnyModel::TftLite(m) => m.forecast_batch(batch),
        }
    }
}

/// Splits `[B, H, Q]` (or `[B, H]` when `nq == 0`) outputs into bundles
/// with sorted quantile rows and the median as point forecast.
pub(crate) fn bundles_from_output<T: Scalar>(
    values: &[T],
    batch: usize,
    horizon: usize,
    nq: usize,
    median: Option<usize>,
) -> Vec<ForecastBundle<T>> {
    if nq == 0 {
        return values
            .chunks(horizon)
            .take(batch)
            .map(|p| ForecastBundle::point_only(p.to_vec()))
            .collect();
    }
    let med = median.unwrap_or(nq / 2);
    values
        .chunks(horizon * nq)
        .take(batch)
        .map(|rows| {
            let sorted = crate::metrics::monotonic_rearrange(rows, nq);
            let point = sorted.chunks(nq).map(|r| r[med]).collect();
            ForecastBundle {
                point,
                quantiles: Some(sorted),
                backcast: None,
                decomposition: None,
                attention: None,
            }
        })
        .collect()
}
