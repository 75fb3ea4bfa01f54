#![allow(dead_code)]

use cso_forecast::data::{make_windows, split_and_normalize, WindowConfig, WindowSet};
use cso_forecast::synthetic::{sewer_network, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Normalized training windows from a short synthetic series.
pub fn sewer_windows(n_hours: usize, encoder_len: usize, horizon: usize, seed: u64) -> WindowSet {
    let table = sewer_network(&SynthConfig {
        n_hours,
        seed,
        n_signal: 2,
        n_noise: 1,
        ..Default::default()
    })
    .unwrap();
    let split = split_and_normalize(&table, 0.8, encoder_len + horizon).unwrap();
    let cfg = WindowConfig {
        encoder_len,
        horizon,
        stride: 1,
    };
    make_windows(&split.train, &cfg).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Windows filled with uniform noise; calendar features are random too.
pub fn random_set(
    encoder_len: usize,
    horizon: usize,
    n_features: usize,
    n_samples: usize,
    seed: u64,
) -> WindowSet {
    use chrono::{Duration, TimeZone, Utc};
    use cso_forecast::data::{WindowSample, TIME_FEATURES};
    let mut r = rng(seed);
    let k = TIME_FEATURES.len();
    let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
    let samples = (0..n_samples)
        .map(|i| WindowSample {
            offset: i,
            encoder: uniform(&mut r, encoder_len * n_features),
            target: uniform(&mut r, horizon),
            t0: t0 + Duration::hours((i + encoder_len) as i64),
            known_past: uniform(&mut r, encoder_len * k),
            known_future: uniform(&mut r, horizon * k),
        })
        .collect();
    WindowSet {
        encoder_len,
        horizon,
        features: (0..n_features)
            .map(|j| if j == 0 { "target".to_string() } else { format!("x{j}") })
            .collect(),
        samples,
    }
}
