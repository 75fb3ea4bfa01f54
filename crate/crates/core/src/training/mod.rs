//! AdamW with global-norm clipping, stochastic weight averaging and early
//! stopping, plus a random-search driver.

mod hpo;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use hpo::{random_search, HpoSpace, LogRange, Range, Trial, TrialParams};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::models::{Batch, Mode, Trainable};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Applied through the forward mode; overrides any model-level value.
    pub dropout: f64,
    pub weight_decay: f64,
    /// Global-norm threshold.
    pub gradient_clip: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub swa_start_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            dropout: 0.1,
            weight_decay: 1e-2,
            gradient_clip: 1.0,
            batch_size: 64,
            max_epochs: 100,
            early_stop_patience: 10,
            swa_start_fraction: 0.75,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config(format!("train.{field}: {msg}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be >= 0");
        }
        if !(self.gradient_clip > 0.0) {
            return bad("gradient_clip", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be >= 1");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience", "must be >= 1");
        }
        if !(0.0..1.0).contains(&self.swa_start_fraction) {
            return bad("swa_start_fraction", "must lie in [0, 1)");
        }
        Ok(())
    }

    /// First (1-based) epoch whose parameters enter the SWA average.
    pub fn swa_start_epoch(&self) -> usize {
        ((self.swa_start_fraction * self.max_epochs as f64).ceil() as usize).max(1)
    }
}

/// Anything the loop can optimize: parameters, a minibatch objective over
/// training indices and a validation loss.
pub trait Fit<T: Scalar> {
    fn params(&self) -> &ParamStore<T>;

    fn params_mut(&mut self) -> &mut ParamStore<T>;

    fn n_train(&self) -> usize;

    fn train_loss(&self, g: &mut Graph<T>, idx: &[usize], mode: &mut Mode<'_>) -> Result<Var>;

    fn val_loss(&self) -> Result<f64>;
}

/// Adapter training a model on window sets.
pub struct WindowFit<'a, M> {
    pub model: M,
    pub train: &'a WindowSet,
    pub val: &'a WindowSet,
    pub batch_size: usize,
}

impl<'a, M> WindowFit<'a, M> {
    pub fn new(model: M, train: &'a WindowSet, val: &'a WindowSet, batch_size: usize) -> Self {
        Self {
            model,
            train,
            val,
            batch_size,
        }
    }
}

impl<T: Scalar, M: Trainable<T>> Fit<T> for WindowFit<'_, M> {
    fn params(&self) -> &ParamStore<T> {
        self.model.params()
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        self.model.params_mut()
    }

    fn n_train(&self) -> usize {
        self.train.len()
    }

    fn train_loss(&self, g: &mut Graph<T>, idx: &[usize], mode: &mut Mode<'_>) -> Result<Var> {
        let batch = Batch::from_windows(self.train, idx)?;
        self.model.batch_loss(g, &batch, mode)
    }

    fn val_loss(&self) -> Result<f64> {
        if self.val.is_empty() {
            return Err(Error::Empty("validation windows"));
        }
        let idx: Vec<usize> = (0..self.val.len()).collect();
        let mut total = 0.0;
        for chunk in idx.chunks(self.batch_size.max(1)) {
            let batch = Batch::from_windows(self.val, chunk)?;
            let mut g = Graph::new();
            let loss = self.model.batch_loss(&mut g, &batch, &mut Mode::Eval)?;
            total += g.value(loss).item().to_f64_lossy() * chunk.len() as f64;
        }
        Ok(total / self.val.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub swa_active: bool,
    pub swa_count: usize,
    pub clip_events: usize,
    pub improved: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub swa_start_epoch: usize,
}

impl TrainingLog {
    /// One JSON object per epoch.
    /// One summary line (`header` fields plus best epoch, early-stop flag and
    /// SWA start), then one line per epoch.
    pub fn write_jsonl(&self, path: &Path, header: &serde_json::Map<String, serde_json::Value>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut first = header.clone();
        first.insert("best_epoch".into(), self.best_epoch.into());
        first.insert("best_val_loss".into(), self.best_val_loss.into());
        first.insert("stopped_early".into(), self.stopped_early.into());
        first.insert("swa_start_epoch".into(), self.swa_start_epoch.into());
        first.insert("epochs".into(), self.epochs.len().into());
        serde_json::to_writer(&mut out, &first)?;
        out.write_all(b"\n")?;
        for e in &self.epochs {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Running equal-weight parameter average.
#[derive(Debug, Clone)]
pub struct Swa {
    sum: Vec<f64>,
    count: usize,
}

impl Swa {
    pub fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            count: 0,
        }
    }

    pub fn update<T: Scalar>(&mut self, values: &[T]) {
        for (s, v) in self.sum.iter_mut().zip(values) {
            *s += v.to_f64_lossy();
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn average<T: Scalar>(&self) -> Vec<T> {
        let n = self.count.max(1) as f64;
        self.sum.iter().map(|s| T::lit(s / n)).collect()
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step<T: Scalar>(&mut self, params: &mut [T], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let p = params[i].to_f64_lossy();
            let p = p - self.lr * self.weight_decay * p - self.lr * mhat / (vhat.sqrt() + self.eps);
            params[i] = T::lit(p);
        }
    }
}

/// Scales `grads` in place so the global L2 norm is at most `max_norm`.
/// Returns the norm before and after.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> (f64, f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
        let after = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        (norm, after)
    } else {
        (norm, norm)
    }
}

/// What the observer sees at the end of every epoch.
pub struct EpochEvent<'a, T> {
    pub record: &'a EpochRecord,
    /// Raw optimizer parameters after the epoch.
    pub params: &'a ParamStore<T>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainingLog,
    /// Final SWA average, when averaging started.
    pub swa_average: Option<Vec<f64>>,
}

pub fn train<T: Scalar, F: Fit<T>>(fit: &mut F, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(fit, cfg, |_| {})
}

/// Runs the loop and leaves the best candidate parameters in `fit`.
///
/// Before the SWA start epoch the candidate is the raw parameter vector;
/// from then on it is the running SWA average. The candidate with the
/// lowest validation loss is restored at the end.
pub fn train_with_observer<T: Scalar, F: Fit<T>>(
    fit: &mut F,
    cfg: &TrainConfig,
    mut observer: impl FnMut(EpochEvent<'_, T>),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = fit.n_train();
    if n == 0 {
        return Err(Error::Empty("training windows"));
    }
    let n_params = fit.params().num_scalars();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(n_params, cfg.learning_rate, cfg.weight_decay);
    let mut swa = Swa::new(n_params);
    let swa_start = cfg.swa_start_epoch();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainingLog {
        best_val_loss: f64::INFINITY,
        swa_start_epoch: swa_start,
        ..Default::default()
    };
    let mut best: Option<Vec<T>> = None;
    let mut since_best = 0usize;
    let mut step = 0usize;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut clip_events = 0;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            fit.params_mut().zero_grad();
            let mut g = Graph::new();
            let loss = {
                let mut mode = Mode::Train {
                    rng: &mut rng,
                    dropout: cfg.dropout,
                };
                fit.train_loss(&mut g, chunk, &mut mode)?
            };
            let lv = g.value(loss).item().to_f64_lossy();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {lv} at epoch {epoch}, step {step}"
                )));
            }
            g.backward(loss, fit.params_mut())?;
            drop(g);
            let mut grads: Vec<f64> = fit
                .params()
                .flat_grads()
                .into_iter()
                .map(|x| x.to_f64_lossy())
                .collect();
            let (before, after) = clip_global_norm(&mut grads, cfg.gradient_clip);
            if !before.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient norm {before} at epoch {epoch}, step {step}"
                )));
            }
            let clipped = before > cfg.gradient_clip;
            clip_events += usize::from(clipped);
            log.steps.push(StepRecord {
                epoch,
                step,
                loss: lv,
                grad_norm: before,
                clipped_norm: after,
                clipped,
            });
            let mut flat = fit.params().flat_values();
            opt.step(&mut flat, &grads);
            fit.params_mut().set_flat_values(&flat)?;
            loss_sum += lv * chunk.len() as f64;
        }

        let raw = fit.params().flat_values();
        let swa_active = epoch >= swa_start;
        let candidate = if swa_active {
            swa.update(&raw);
            swa.average::<T>()
        } else {
            raw.clone()
        };
        fit.params_mut().set_flat_values(&candidate)?;
        let val = fit.val_loss()?;
        fit.params_mut().set_flat_values(&raw)?;
        if !val.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {val} at epoch {epoch}")));
        }

        let improved = val < log.best_val_loss;
        if improved {
            log.best_val_loss = val;
            log.best_epoch = epoch;
            best = Some(candidate);
            since_best = 0;
        } else {
            since_best += 1;
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val_loss: val,
            swa_active,
            swa_count: swa.count(),
            clip_events,
            improved,
        });
        observer(EpochEvent {
            record: log.epochs.last().expect("just pushed"),
            params: fit.params(),
        });
        if since_best >= cfg.early_stop_patience {
            log.stopped_early = true;
            break;
        }
    }

    if let Some(b) = best {
        fit.params_mut().set_flat_values(&b)?;
    }
    let swa_average = (swa.count() > 0).then(|| swa.average::<f64>());
    Ok(TrainOutcome { log, swa_average })
}
