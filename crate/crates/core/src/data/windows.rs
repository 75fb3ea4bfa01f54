use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};

use super::table::SeriesTable;
use crate::error::{Error, Result};

/// Names of the calendar features placed in `known_past` / `known_future`.
pub const TIME_FEATURES: [&str; 5] = ["hour_sin", "hour_cos", "doy_sin", "doy_cos", "time_idx"];

/// Calendar encoding of one timestamp: hour-of-day and day-of-year as
/// sin/cos pairs, then the elapsed fraction of the calendar year.
pub fn time_features(t: DateTime<Utc>) -> [f64; 5] {
    use std::f64::consts::TAU;
    let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
    let days_in_year = if chrono::NaiveDate::from_ymd_opt(t.year(), 2, 29).is_some() {
        366.0
    } else {
        365.0
    };
    let day = t.ordinal0() as f64 + hour / 24.0;
    let h = TAU * hour / 24.0;
    let d = TAU * day / days_in_year;
    [h.sin(), h.cos(), d.sin(), d.cos(), day / days_in_year]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub encoder_len: usize,
    pub horizon: usize,
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            encoder_len: 48,
            horizon: 10,
            stride: 1,
        }
    }
}

impl WindowConfig {
    pub fn min_rows(&self) -> usize {
        self.encoder_len + self.horizon
    }

    /// `floor((n - L - H) / stride) + 1`, or 0 when `n < L + H`.
    pub fn count(&self, n: usize) -> usize {
        if n < self.min_rows() || self.stride == 0 {
            0
        } else {
            (n - self.min_rows()) / self.stride + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_len == 0 || self.horizon == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "encoder_len, horizon and stride must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One training instance. Matrices are row-major with time as the row index.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Row offset of the first encoder step in the source table.
    pub offset: usize,
    /// `encoder_len x n_features`; column 0 is the target's own history.
    pub encoder: Vec<f64>,
    pub target: Vec<f64>,
    /// Timestamp of the first forecast step.
    pub t0: DateTime<Utc>,
    /// `encoder_len x TIME_FEATURES.len()`.
    pub known_past: Vec<f64>,
    /// `horizon x TIME_FEATURES.len()`.
    pub known_future: Vec<f64>,
}

impl WindowSample {
    pub fn encoder_column(&self, n_features: usize, j: usize) -> Vec<f64> {
        self.encoder.iter().skip(j).step_by(n_features).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub encoder_len: usize,
    pub horizon: usize,
    /// Observed features; the target first, then covariates.
    pub features: Vec<String>,
    pub samples: Vec<WindowSample>,
}

impl WindowSet {
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_known(&self) -> usize {
        TIME_FEATURES.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn encoder_target(&self, sample: &WindowSample) -> Vec<f64> {
        sample.encoder_column(self.n_features(), 0)
    }

    pub fn subset(&self, idx: impl IntoIterator<Item = usize>) -> WindowSet {
        WindowSet {
            encoder_len: self.encoder_len,
            horizon: self.horizon,
            features: self.features.clone(),
            samples: idx.into_iter().map(|i| self.samples[i].clone()).collect(),
        }
    }
}

/// Slides over `table` at offsets `0, stride, 2*stride, ...`.
pub fn make_windows(table: &SeriesTable, cfg: &WindowConfig) -> Result<WindowSet> {
    cfg.validate()?;
    let n = table.len();
    if n < cfg.min_rows() {
        return Err(Error::TooShort {
            required: cfg.min_rows(),
            actual: n,
        });
    }
    let target_name = table.target_name().to_string();
    let mut features = vec![target_name.clone()];
    features.extend(table.covariate_names().into_iter().map(str::to_string));
    let cols: Vec<&[f64]> = features
        .iter()
        .map(|f| table.column(f).expect("feature names come from the table"))
        .collect();
    let ts = table.timestamps();
    let calendar: Vec<[f64; 5]> = ts.iter().map(|&t| time_features(t)).collect();
    let (l, h) = (cfg.encoder_len, cfg.horizon);

    let mut samples = Vec::with_capacity(cfg.count(n));
    let mut offset = 0;
    while offset + l + h <= n {
        let mut encoder = Vec::with_capacity(l * cols.len());
        for t in offset..offset + l {
            encoder.extend(cols.iter().map(|c| c[t]));
        }
        let target = cols[0][offset + l..offset + l + h].to_vec();
        if encoder.iter().chain(&target).any(|v| v.is_nan()) {
            return Err(Error::Data(format!(
                "window at row {offset} contains NaN; impute before windowing"
            )));
        }
        samples.push(WindowSample {
            offset,
            encoder,
            target,
            t0: ts[offset + l],
            known_past: calendar[offset..offset + l].concat(),
            known_future: calendar[offset + l..offset + l + h].concat(),
        });
        offset += cfg.stride;
    }
    Ok(WindowSet {
        encoder_len: l,
        horizon: h,
        features,
        samples,
    })
}

/// Windows for both partitions of a chronological split.
///
/// With `allow_boundary_encoders` the validation set also contains windows
/// whose encoder reaches back into the training rows; their targets still
/// lie entirely in the validation partition.
pub fn make_split_windows(
    train: &SeriesTable,
    val: &SeriesTable,
    cfg: &WindowConfig,
    allow_boundary_encoders: bool,
) -> Result<(WindowSet, WindowSet)> {
    let train_set = make_windows(train, cfg)?;
    let val_set = if allow_boundary_encoders && train.len() >= cfg.encoder_len {
        let head = train.rows(train.len() - cfg.encoder_len, train.len());
        let joined = concat_rows(&head, val)?;
        make_windows(&joined, cfg)?
    } else {
        make_windows(val, cfg)?
    };
    Ok((train_set, val_set))
}

fn concat_rows(a: &SeriesTable, b: &SeriesTable) -> Result<SeriesTable> {
    let mut ts = a.timestamps().to_vec();
    ts.extend_from_slice(b.timestamps());
    let columns = a
        .columns()
        .iter()
        .map(|(k, v)| {
            let mut v = v.clone();
            v.extend_from_slice(b.column(k).unwrap_or(&[]));
            (k.clone(), v)
        })
        .collect();
    SeriesTable::new(ts, a.step(), columns, a.meta().clone())
}
