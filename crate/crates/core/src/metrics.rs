use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub mae: f64,
    pub rmse: f64,
}

pub fn point_metrics(preds: &[f64], targets: &[f64]) -> Result<PointMetrics> {
    if preds.is_empty() {
        return Err(Error::Empty("point_metrics needs at least one forecast"));
    }
    if preds.len() != targets.len() {
        return Err(Error::Shape {
            op: "point_metrics",
            lhs: vec![preds.len()],
            rhs: vec![targets.len()],
        });
    }
    let n = preds.len() as f64;
    let (abs, sq) = preds
        .iter()
        .zip(targets)
        .fold((0.0, 0.0), |(a, s), (&p, &y)| {
            let e = y - p;
            (a + e.abs(), s + e * e)
        });
    Ok(PointMetrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
    })
}

/// Sorts each row of a row-major `H x Q` matrix ascending.
pub fn monotonic_rearrange<T: Scalar>(pred: &[T], n_quantiles: usize) -> Vec<T> {
    let mut out = pred.to_vec();
    if n_quantiles > 0 {
        for row in out.chunks_mut(n_quantiles) {
            row.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub ms_per_sample: f64,
    pub repeats: usize,
}

/// Median wall time of `repeats` timed passes over `n_samples` single-sample
/// forward calls, after one untimed warm-up pass.
pub fn measure_latency<F: FnMut(usize)>(n_samples: usize, repeats: usize, mut forward: F) -> Result<Latency> {
    if repeats < 3 {
        return Err(Error::Config(format!("latency needs >= 3 repeats, got {repeats}")));
    }
    if n_samples == 0 {
        return Err(Error::Empty("latency measurement needs samples"));
    }
    for i in 0..n_samples {
        forward(i);
    }
    let mut per_sample = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        for i in 0..n_samples {
            forward(i);
        }
        per_sample.push(start.elapsed().as_secs_f64() * 1e3 / n_samples as f64);
    }
    per_sample.sort_by(f64::total_cmp);
    let mid = per_sample.len() / 2;
    let median = if per_sample.len() % 2 == 1 {
        per_sample[mid]
    } else {
        0.5 * (per_sample[mid - 1] + per_sample[mid])
    };
    Ok(Latency {
        // Guard against timers too coarse to see a trivially cheap model.
        ms_per_sample: median.max(f64::MIN_POSITIVE),
        repeats,
    })
}
