//! Linear extrapolation from the end of the encoder window.

use serde::{Deserialize, Serialize};

use super::{Batch, ForecastBundle, Forecaster, ModelKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Trailing encoder points the line is fitted to (>= 2).
    pub fit_points: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { fit_points: 2 }
    }
}

/// Least-squares line through the last `fit_points` values of
/// `encoder_target`, evaluated at the next `horizon` steps.
pub fn baseline_forecast<T: Scalar>(encoder_target: &[T], horizon: usize, cfg: &BaselineConfig) -> Result<Vec<T>> {
    let k = cfg.fit_points;
    if k < 2 {
        return Err(Error::Config(format!("fit_points must be >= 2, got {k}")));
    }
    if encoder_target.len() < k {
        return Err(Error::TooShort {
            required: k,
            actual: encoder_target.len(),
        });
    }
    let tail = &encoder_target[encoder_target.len() - k..];
    // Abscissae 0..k centred at their mean keeps the normal equations exact
    // for k = 2 (the line through the last two points).
    let kf = T::lit(k as f64);
    let xbar = T::lit((k - 1) as f64 / 2.0);
    let ybar = tail.iter().copied().sum::<T>() / kf;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (i, &y) in tail.iter().enumerate() {
        let dx = T::lit(i as f64) - xbar;
        sxy += dx * (y - ybar);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    Ok((0..horizon)
        .map(|j| ybar + slope * (T::lit((k + j) as f64) - xbar))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Baseline {
    pub cfg: BaselineConfig,
}

impl Baseline {
    pub fn new(cfg: BaselineConfig) -> Result<Self> {
        if cfg.fit_points < 2 {
            return Err(Error::Config(format!(
                "fit_points must be >= 2, got {}",
                cfg.fit_points
            )));
        }
        Ok(Self { cfg })
    }
}

impl<T: Scalar> Forecaster<T> for Baseline {
    fn kind(&self) -> ModelKind {
        ModelKind::Baseline
    }

    fn forecast_batch(&self, batch: &Batch<T>) -> Result<Vec<ForecastBundle<T>>> {
        batch
            .enc_target
            .chunks(batch.encoder_len)
            .map(|enc| {
                baseline_forecast(enc, batch.horizon, &self.cfg).map(ForecastBundle::point_only)
            })
            .collect()
    }
}
