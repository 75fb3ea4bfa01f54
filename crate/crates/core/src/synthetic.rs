//! Seeded synthetic sewer data.
//!
//! [`sewer_network`] mimics a storage-tank catchment: a daily dry-weather
//! cycle plus rain-driven spikes. Sensors in the `upstream` cluster see the
//! runoff `lag_hours` before it reaches the tank; sensors in the `remote`
//! cluster behave alike but drain a separate catchment, so they carry no
//! information about the tank.
//!
//! [`single_driver`] builds a table whose target is a lagged copy of exactly
//! one exogenous column.

use chrono::{DateTime, Duration, TimeZone, Utc};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnMeta, ColumnRole, SeriesTable};
use crate::error::{Error, Result};

pub const TARGET: &str = "tank_volume";
pub const SIGNAL_CLUSTER: &str = "upstream";
pub const NOISE_CLUSTER: &str = "remote";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_hours: usize,
    pub start: DateTime<Utc>,
    pub seed: u64,
    pub n_signal: usize,
    pub n_noise: usize,
    pub lag_hours: usize,
    /// Adds the latent rain intensity as a `rain` column.
    pub include_rain: bool,
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_hours: 8760,
            start: Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(),
            seed: 42,
            n_signal: 3,
            n_noise: 3,
            lag_hours: 6,
            include_rain: false,
            noise_std: 0.05,
        }
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn hourly_stamps(start: DateTime<Utc>, n: usize) -> Vec<DateTime<Utc>> {
    (0..n).map(|i| start + Duration::hours(i as i64)).collect()
}

/// Dry-weather inflow pattern over the day, mean about 1.
fn dry_weather(hour: f64) -> f64 {
    use std::f64::consts::PI;
    1.0 + 0.5 * (2.0 * PI * (hour - 7.0) / 24.0).sin() + 0.2 * (4.0 * PI * hour / 24.0).sin()
}

/// Storms start with probability 1.5% per hour, last 1..=6 hours and carry
/// exponentially distributed intensity.
fn rain_process(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let intensity = Exp::new(1.0 / 3.0).expect("positive rate");
    let mut rain = vec![0.0; n];
    for t in 0..n {
        if rng.gen::<f64>() < 0.015 {
            let len = rng.gen_range(1..=6);
            let amp: f64 = intensity.sample(rng);
            for r in rain.iter_mut().skip(t).take(len) {
                *r += amp;
            }
        }
    }
    rain
}

pub fn sewer_network(cfg: &SynthConfig) -> Result<SeriesTable> {
    if cfg.n_hours <= cfg.lag_hours {
        return Err(Error::Config(format!(
            "n_hours {} must exceed lag_hours {}",
            cfg.n_hours, cfg.lag_hours
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_hours;
    let lag = cfg.lag_hours;
    let stamps = hourly_stamps(cfg.start, n + lag);
    let hour = |i: usize| (cfg.start.timestamp() / 3600 + i as i64).rem_euclid(24) as f64;

    // Simulate `lag` extra hours up front so the tank has history at t = 0.
    let rain = rain_process(n + lag, &mut rng);
    let mut runoff = vec![0.0; n + lag];
    for t in 0..n + lag {
        runoff[t] = rain[t] + if t > 0 { 0.7 * runoff[t - 1] } else { 0.0 };
    }

    let mut columns: IndexMap<String, Vec<f64>> = IndexMap::new();
    let mut meta: IndexMap<String, ColumnMeta> = IndexMap::new();

    let tank: Vec<f64> = (lag..n + lag)
        .map(|t| 2.0 * dry_weather(hour(t - lag)) + 1.5 * runoff[t - lag] + cfg.noise_std * gauss(&mut rng))
        .collect();
    columns.insert(TARGET.into(), tank);
    meta.insert(TARGET.into(), ColumnMeta::new(ColumnRole::Target));

    for i in 0..cfg.n_signal {
        let name = format!("{SIGNAL_CLUSTER}_{}", i + 1);
        let a = 0.8 + 0.2 * i as f64;
        let b = 1.0 + 0.25 * i as f64;
        let col = (lag..n + lag)
            .map(|t| a * dry_weather(hour(t)) + b * runoff[t] + cfg.noise_std * gauss(&mut rng))
            .collect();
        columns.insert(name.clone(), col);
        meta.insert(name, ColumnMeta::in_cluster(ColumnRole::Exogenous, SIGNAL_CLUSTER));
    }
    // The remote catchment has the same sensor physics driven by its own,
    // independent rain, so only the dependence on the tank differs.
    let remote_rain = rain_process(n, &mut rng);
    let mut remote_runoff = vec![0.0; n];
    for t in 0..n {
        remote_runoff[t] = remote_rain[t] + if t > 0 { 0.7 * remote_runoff[t - 1] } else { 0.0 };
    }
    for i in 0..cfg.n_noise {
        let name = format!("{NOISE_CLUSTER}_{}", i + 1);
        let a = 0.8 + 0.2 * i as f64;
        let b = 1.0 + 0.25 * i as f64;
        let col = (0..n)
            .map(|t| a * dry_weather(hour(t + lag) + 3.0) + b * remote_runoff[t] + cfg.noise_std * gauss(&mut rng))
            .collect();
        columns.insert(name.clone(), col);
        meta.insert(name, ColumnMeta::in_cluster(ColumnRole::Exogenous, NOISE_CLUSTER));
    }
    if cfg.include_rain {
        columns.insert("rain".into(), rain[lag..].to_vec());
        meta.insert("rain".into(), ColumnMeta::new(ColumnRole::Rain));
    }
    SeriesTable::new(stamps[lag..].to_vec(), Duration::hours(1), columns, meta)
}

/// Target `y_t = driver_{t - lag} + noise`; the driver is a smooth AR(1)
/// process and the `n_noise` distractors are independent AR(1) processes
/// with the same marginal law.
pub fn single_driver(n: usize, lag: usize, n_noise: usize, seed: u64) -> Result<SeriesTable> {
    if lag == 0 || n <= lag {
        return Err(Error::Config(format!("need 0 < lag < n, got lag {lag}, n {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ar = |rng: &mut ChaCha8Rng, len: usize| {
        let mut x = 0.0;
        (0..len)
            .map(|_| {
                x = 0.9 * x + gauss(rng);
                x
            })
            .collect::<Vec<f64>>()
    };
    let driver = ar(&mut rng, n + lag);
    let start = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
    let mut columns = IndexMap::new();
    let mut meta = IndexMap::new();
    let y: Vec<f64> = (0..n).map(|t| driver[t] + 0.05 * gauss(&mut rng)).collect();
    columns.insert("target".to_string(), y);
    meta.insert("target".to_string(), ColumnMeta::new(ColumnRole::Target));
    for i in 0..n_noise {
        let name = format!("noise_{}", i + 1);
        columns.insert(name.clone(), ar(&mut rng, n));
        meta.insert(name, ColumnMeta::new(ColumnRole::Exogenous));
    }
    columns.insert("driver".to_string(), driver[lag..].to_vec());
    meta.insert("driver".to_string(), ColumnMeta::new(ColumnRole::Exogenous));
    SeriesTable::new(hourly_stamps(start, n), Duration::hours(1), columns, meta)
}
