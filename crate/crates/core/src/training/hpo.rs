use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.high > self.low {
            rng.gen_range(self.low..self.high)
        } else {
            self.low
        }
    }
}

/// Sampled uniformly in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRange {
    pub low: f64,
    pub high: f64,
}

impl LogRange {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let (a, b) = (self.low.ln(), self.high.ln());
        if b > a {
            rng.gen_range(a..b).exp()
        } else {
            self.low
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HpoSpace {
    pub learning_rate: LogRange,
    pub weight_decay: LogRange,
    pub dropout: Range,
    pub gradient_clip: Range,
    pub hidden_size: Vec<usize>,
    pub attention_heads: Vec<usize>,
}

impl Default for HpoSpace {
    fn default() -> Self {
        Self {
            learning_rate: LogRange { low: 1e-3, high: 1e-1 },
            weight_decay: LogRange { low: 1e-4, high: 1e-1 },
            dropout: Range { low: 0.0, high: 0.3 },
            gradient_clip: Range { low: 0.005, high: 0.5 },
            hidden_size: vec![4, 8, 16, 32, 64, 128, 256, 512],
            attention_heads: vec![1, 2, 3, 4],
        }
    }
}

impl HpoSpace {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("hpo space: {m}")));
        for (name, r) in [("learning_rate", self.learning_rate), ("weight_decay", self.weight_decay)] {
            if !(r.low > 0.0 && r.high >= r.low) {
                return bad(&format!("{name} needs 0 < low <= high"));
            }
        }
        for (name, r) in [("dropout", self.dropout), ("gradient_clip", self.gradient_clip)] {
            if !(r.high >= r.low) {
                return bad(&format!("{name} needs low <= high"));
            }
        }
        if self.hidden_size.is_empty() || self.attention_heads.is_empty() {
            return bad("categorical choices must be nonempty");
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> TrialParams {
        TrialParams {
            learning_rate: self.learning_rate.sample(rng),
            weight_decay: self.weight_decay.sample(rng),
            dropout: self.dropout.sample(rng),
            gradient_clip: self.gradient_clip.sample(rng),
            hidden_size: self.hidden_size[rng.gen_range(0..self.hidden_size.len())],
            attention_heads: self.attention_heads[rng.gen_range(0..self.attention_heads.len())],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub gradient_clip: f64,
    pub hidden_size: usize,
    pub attention_heads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub seed: u64,
    pub params: TrialParams,
    /// Validation score, lower is better; `None` when the trial failed.
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Samples trial `index` from its own ChaCha stream so the draw does not
/// depend on scheduling.
fn sample_trial(space: &HpoSpace, seed: u64, index: usize) -> (TrialParams, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let params = space.sample(&mut rng);
    (params, rng.gen())
}

/// Runs `budget` independent trials on at most `jobs` threads and returns
/// them ranked by score, failed trials last.
pub fn random_search<F>(space: &HpoSpace, budget: usize, seed: u64, jobs: usize, objective: F) -> Result<Vec<Trial>>
where
    F: Fn(&TrialParams, u64) -> Result<f64> + Sync,
{
    space.validate()?;
    if budget == 0 {
        return Err(Error::Config("hpo budget must be >= 1".into()));
    }
    let run = |index: usize| {
        let (params, trial_seed) = sample_trial(space, seed, index);
        let (score, error) = match objective(&params, trial_seed) {
            Ok(s) if s.is_finite() => (Some(s), None),
            Ok(s) => (None, Some(format!("non-finite score {s}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        Trial {
            index,
            seed: trial_seed,
            params,
            score,
            error,
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut trials: Vec<Trial> = pool.install(|| (0..budget).into_par_iter().map(run).collect());
    if trials.iter().all(|t| t.score.is_none()) {
        let first = trials[0].error.clone().unwrap_or_default();
        return Err(Error::NonFinite(format!("all {budget} hpo trials failed; first: {first}")));
    }
    trials.sort_by(|a, b| match (a.score, b.score) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.index.cmp(&b.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    });
    Ok(trials)
}
