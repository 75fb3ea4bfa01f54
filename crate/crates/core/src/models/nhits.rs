//! N-HiTS: stacks of MLP blocks with multi-rate input pooling and
//! hierarchical interpolation of forecast coefficients.
//!
//! Each stack sees the residual left by the stacks before it, max-pooled at
//! its own rate, and emits a full-resolution backcast plus a handful of
//! forecast coefficients that are linearly interpolated to the horizon. The
//! model forecast is the plain sum of the stack forecasts, which makes the
//! per-stack outputs an exact additive explanation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{dropout, Linear, Mode};
use super::{bundles_from_output, Batch, ForecastBundle, Forecaster, ModelKind, Trainable};
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::losses::{mase_graph, quantile_graph, scaled_abs_graph, QuantileSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NHitsConfig {
    pub encoder_len: usize,
    pub horizon: usize,
    /// Exogenous encoder columns concatenated to every block input.
    pub n_covariates: usize,
    pub n_stacks: usize,
    pub blocks_per_stack: usize,
    /// Max-pool kernel per stack; the first stack is the finest.
    pub pooling_sizes: Vec<usize>,
    /// Per stack, the horizon is represented by `ceil(horizon / ratio)`
    /// interpolation coefficients.
    pub downsample_ratios: Vec<usize>,
    pub hidden_size: usize,
    pub n_hidden_layers: usize,
    pub dropout: f64,
    /// Total loss is `forecast_loss + backcast_loss_ratio * backcast_loss`.
    pub backcast_loss_ratio: f64,
    #[serde(default)]
    pub output_quantiles: Option<QuantileSet>,
    #[serde(default)]
    pub seed: u64,
}

impl NHitsConfig {
    pub fn new(encoder_len: usize, horizon: usize, n_covariates: usize) -> Self {
        Self {
            encoder_len,
            horizon,
            n_covariates,
            n_stacks: 3,
            blocks_per_stack: 1,
            pooling_sizes: vec![1, 4, 8],
            downsample_ratios: vec![1, 2, 4],
            hidden_size: 512,
            n_hidden_layers: 2,
            dropout: 0.1,
            backcast_loss_ratio: 1.0,
            output_quantiles: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("nhits: {msg}")));
        if self.encoder_len == 0 || self.horizon == 0 {
            return bad("encoder_len and horizon must be >= 1".into());
        }
        if self.n_stacks == 0 || self.blocks_per_stack == 0 {
            return bad("need at least one stack and one block per stack".into());
        }
        if self.pooling_sizes.len() != self.n_stacks || self.downsample_ratios.len() != self.n_stacks {
            return bad(format!(
                "pooling_sizes ({}) and downsample_ratios ({}) must both have n_stacks = {} entries",
                self.pooling_sizes.len(),
                self.downsample_ratios.len(),
                self.n_stacks
            ));
        }
        if self.pooling_sizes.iter().chain(&self.downsample_ratios).any(|&p| p == 0) {
            return bad("pooling sizes and downsample ratios must be >= 1".into());
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if let Some(q) = &self.output_quantiles {
            if q.median_index().is_none() {
                return bad("output_quantiles must contain 0.5".into());
            }
        }
        Ok(())
    }

    pub fn n_outputs(&self) -> usize {
        self.output_quantiles.as_ref().map_or(1, QuantileSet::len)
    }

    pub fn n_coefficients(&self, stack: usize) -> usize {
        self.horizon.div_ceil(self.downsample_ratios[stack])
    }

    pub fn pooled_len(&self, stack: usize) -> usize {
        self.encoder_len.div_ceil(self.pooling_sizes[stack])
    }
}

#[derive(Debug, Clone)]
struct Block {
    pool: usize,
    n_coef: usize,
    mlp: Vec<Linear>,
    backcast: Linear,
    forecast: Linear,
}

/// One stack's share of the backcast and forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackContribution<T> {
    pub pooling_size: usize,
    /// Length `encoder_len`.
    pub backcast: Vec<T>,
    /// Length `horizon`, or row-major `horizon x Q` for quantile output.
    pub forecast: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackDecomposition<T> {
    pub stacks: Vec<StackContribution<T>>,
}

/// Raw per-sample output before quantile rows are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct NHitsOutput<T> {
    pub forecast: Vec<T>,
    pub backcast: Vec<T>,
    pub decomposition: StackDecomposition<T>,
}

struct GraphOutput {
    forecast: Var,
    backcast: Var,
    stack_forecasts: Vec<Var>,
    stack_backcasts: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct NHits<T> {
    cfg: NHitsConfig,
    params: ParamStore<T>,
    stacks: Vec<Vec<Block>>,
}

impl<T: Scalar> NHits<T> {
    /// Initializes weights uniformly in `±1/sqrt(fan_in)` from `cfg.seed`.
    pub fn new(cfg: NHitsConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let nq = cfg.n_outputs();
        let mut stacks = Vec::with_capacity(cfg.n_stacks);
        for s in 0..cfg.n_stacks {
            let pooled = cfg.pooled_len(s);
            let input = pooled * (1 + cfg.n_covariates);
            let n_coef = cfg.n_coefficients(s);
            let mut blocks = Vec::with_capacity(cfg.blocks_per_stack);
            for b in 0..cfg.blocks_per_stack {
                let name = format!("stack{s}.block{b}");
                let mut mlp = Vec::with_capacity(cfg.n_hidden_layers);
                let mut width = input;
                for l in 0..cfg.n_hidden_layers {
                    mlp.push(Linear::new(
                        &mut params,
                        &format!("{name}.mlp{l}"),
                        width,
                        cfg.hidden_size,
                        &mut rng,
                    )?);
                    width = cfg.hidden_size;
                }
                let backcast =
                    Linear::new(&mut params, &format!("{name}.backcast"), width, cfg.encoder_len, &mut rng)?;
                let forecast =
                    Linear::new(&mut params, &format!("{name}.forecast"), width, n_coef * nq, &mut rng)?;
                blocks.push(Block {
                    pool: cfg.pooling_sizes[s],
                    n_coef,
                    mlp,
                    backcast,
                    forecast,
                });
            }
            stacks.push(blocks);
        }
        Ok(Self {
            cfg,
            params,
            stacks,
        })
    }

    /// Rebuilds the model around stored parameters (layout must match `cfg`).
    pub fn from_params(cfg: NHitsConfig, params: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(cfg)?;
        if !model.params.same_layout(&params) {
            return Err(Error::Container(
                "parameter layout does not match the N-HiTS config".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &NHitsConfig {
        &self.cfg
    }

    fn check_batch(&self, batch: &Batch<T>) -> Result<()> {
        if batch.encoder_len != self.cfg.encoder_len
            || batch.horizon != self.cfg.horizon
            || batch.n_covariates() != self.cfg.n_covariates
        {
            return Err(Error::Shape {
                op: "nhits_forward",
                lhs: vec![self.cfg.encoder_len, self.cfg.horizon, self.cfg.n_covariates],
                rhs: vec![batch.encoder_len, batch.horizon, batch.n_covariates()],
            });
        }
        Ok(())
    }

    fn forward_graph(&self, g: &mut Graph<T>, batch: &Batch<T>, mode: &mut Mode<'_>) -> Result<GraphOutput> {
        self.check_batch(batch)?;
        let (b, l, h) = (batch.size, self.cfg.encoder_len, self.cfg.horizon);
        let c = self.cfg.n_covariates;
        let nq = self.cfg.n_outputs();
        let quantile = self.cfg.output_quantiles.is_some();
        let p = &self.params;

        let y = g.constant(vec![b, l], batch.enc_target.clone())?;
        let cov = if c > 0 {
            Some(g.constant(vec![b, c, l], batch.covariates.clone())?)
        } else {
            None
        };
        let mut pooled_cov: Vec<(usize, Var)> = Vec::new();

        let mut residual = y;
        let mut stack_forecasts = Vec::with_capacity(self.stacks.len());
        let mut stack_backcasts = Vec::with_capacity(self.stacks.len());
        for blocks in &self.stacks {
            let mut stack_f: Option<Var> = None;
            let mut stack_b: Option<Var> = None;
            for block in blocks {
                let mut x = g.max_pool1d(residual, block.pool)?;
                if let Some(cov) = cov {
                    let pc = match pooled_cov.iter().find(|(k, _)| *k == block.pool) {
                        Some(&(_, v)) => v,
                        None => {
                            let pooled = g.max_pool1d(cov, block.pool)?;
                            let lp = g.shape(pooled)[2];
                            let flat = g.reshape(pooled, vec![b, c * lp])?;
                            pooled_cov.push((block.pool, flat));
                            flat
                        }
                    };
                    x = g.concat(&[x, pc], 1)?;
                }
                for layer in &block.mlp {
                    x = layer.forward(g, p, x)?;
                    x = g.relu(x);
                    x = dropout(g, x, mode)?;
                }
                let back = block.backcast.forward(g, p, x)?;
                let coef = block.forecast.forward(g, p, x)?;
                let coef = g.reshape(coef, vec![b, nq, block.n_coef])?;
                let curve = g.interp1d(coef, h)?;
                let fore = if quantile {
                    g.permute(curve, &[0, 2, 1])?
                } else {
                    g.reshape(curve, vec![b, h])?
                };
                residual = g.sub(residual, back)?;
                stack_f = Some(match stack_f {
                    Some(acc) => g.add(acc, fore)?,
                    None => fore,
                });
                stack_b = Some(match stack_b {
                    Some(acc) => g.add(acc, back)?,
                    None => back,
                });
            }
            stack_forecasts.push(stack_f.expect("blocks_per_stack >= 1"));
            stack_backcasts.push(stack_b.expect("blocks_per_stack >= 1"));
        }
        let mut forecast = stack_forecasts[0];
        let mut backcast = stack_backcasts[0];
        for s in 1..stack_forecasts.len() {
            forecast = g.add(forecast, stack_forecasts[s])?;
            backcast = g.add(backcast, stack_backcasts[s])?;
        }
        Ok(GraphOutput {
            forecast,
            backcast,
            stack_forecasts,
            stack_backcasts,
        })
    }

    /// Eval-mode forward pass with the per-stack decomposition of each sample.
    pub fn forward_raw(&self, batch: &Batch<T>) -> Result<Vec<NHitsOutput<T>>> {
        let mut g = Graph::new();
        let out = self.forward_graph(&mut g, batch, &mut Mode::Eval)?;
        let fl = self.cfg.horizon * self.cfg.n_outputs();
        let bl = self.cfg.encoder_len;
        let sample = |v: Var, i: usize, len: usize, g: &Graph<T>| g.value(v).values()[i * len..(i + 1) * len].to_vec();
        Ok((0..batch.size)
            .map(|i| NHitsOutput {
                forecast: sample(out.forecast, i, fl, &g),
                backcast: sample(out.backcast, i, bl, &g),
                decomposition: StackDecomposition {
                    stacks: out
                        .stack_forecasts
                        .iter()
                        .zip(&out.stack_backcasts)
                        .zip(&self.cfg.pooling_sizes)
                        .map(|((&f, &bk), &pool)| StackContribution {
                            pooling_size: pool,
                            backcast: sample(bk, i, bl, &g),
                            forecast: sample(f, i, fl, &g),
                        })
                        .collect(),
                },
            })
            .collect())
    }
}

impl<T: Scalar> Forecaster<T> for NHits<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Nhits
    }

    fn forecast_batch(&self, batch: &Batch<T>) -> Result<Vec<ForecastBundle<T>>> {
        let raw = self.forward_raw(batch)?;
        let nq = self.cfg.output_quantiles.as_ref().map_or(0, QuantileSet::len);
        let median = self.cfg.output_quantiles.as_ref().and_then(QuantileSet::median_index);
        let flat: Vec<T> = raw.iter().flat_map(|r| r.forecast.iter().copied()).collect();
        let mut bundles = bundles_from_output(&flat, batch.size, self.cfg.horizon, nq, median);
        for (bundle, r) in bundles.iter_mut().zip(raw) {
            bundle.backcast = Some(r.backcast);
            bundle.decomposition = Some(r.decomposition);
        }
        Ok(bundles)
    }
}

impl<T: Scalar> Trainable<T> for NHits<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn batch_loss(&self, g: &mut Graph<T>, batch: &Batch<T>, mode: &mut Mode<'_>) -> Result<Var> {
        let out = self.forward_graph(g, batch, mode)?;
        let (forecast_loss, backcast_scale) = match &self.cfg.output_quantiles {
            None => (mase_graph(g, out.forecast, &batch.target, &batch.scales)?, None),
            Some(q) => (
                quantile_graph(g, out.forecast, &batch.target, q)?,
                Some(T::lit(0.5)),
            ),
        };
        let ratio = self.cfg.backcast_loss_ratio;
        if ratio == 0.0 {
            return Ok(forecast_loss);
        }
        let y = g.constant(vec![batch.size, batch.encoder_len], batch.enc_target.clone())?;
        let backcast_loss = match backcast_scale {
            // Same loss family as the forecast: scaled absolute error for
            // MASE, median pinball (half the absolute error) for quantiles.
            None => scaled_abs_graph(g, out.backcast, y, &batch.scales)?,
            Some(half) => {
                let d = g.sub(out.backcast, y)?;
                let a = g.abs(d);
                let m = g.mean(a);
                g.scale(m, half)
            }
        };
        let weighted = g.scale(backcast_loss, T::lit(ratio));
        g.add(forecast_loss, weighted)
    }
}
