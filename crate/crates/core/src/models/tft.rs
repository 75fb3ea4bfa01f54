//! TFT-lite: a reduced temporal fusion transformer keeping the two
//! interpretable pieces, per-timestep variable selection and head-averaged
//! ("interpretable") multi-head attention.
//!
//! Pipeline per sample:
//! 1. every scalar input (observed columns and calendar features) gets a
//!    feature-specific embedding refined by a per-feature gated residual unit;
//! 2. a selection network turns the flattened embeddings into softmax weights
//!    over features, and the weighted sum is the timestep input;
//! 3. a GRU encodes the encoder window;
//! 4. `horizon` decoder queries, built from the known calendar features and
//!    the last hidden state, attend over the encoder states. Heads have their
//!    own query/key projections but share one value projection, so the mean
//!    of the head attention matrices is the attention actually applied;
//! 5. a position-wise gated residual head emits point or quantile forecasts.
//!
//! Static covariates and the LSTM decoder of the full architecture are not
//! modelled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{dropout, GatedResidual, Linear, Mode};
use super::{bundles_from_output, Batch, ForecastBundle, Forecaster, ModelKind, Trainable};
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::data::{WindowSet, TIME_FEATURES};
use crate::error::{Error, Result};
use crate::losses::{mase_graph, quantile_graph, QuantileSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TftConfig {
    pub encoder_len: usize,
    pub horizon: usize,
    /// Observed features including the target history.
    pub feature_names: Vec<String>,
    pub hidden_size: usize,
    pub attention_heads: usize,
    pub dropout: f64,
    #[serde(default)]
    pub output_quantiles: Option<QuantileSet>,
    #[serde(default)]
    pub seed: u64,
}

impl TftConfig {
    pub fn new(encoder_len: usize, horizon: usize, feature_names: Vec<String>) -> Self {
        Self {
            encoder_len,
            horizon,
            feature_names,
            hidden_size: 4,
            attention_heads: 3,
            dropout: 0.2,
            output_quantiles: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("tft-lite: {msg}")));
        if self.encoder_len == 0 || self.horizon == 0 {
            return bad("encoder_len and horizon must be >= 1".into());
        }
        if self.feature_names.is_empty() {
            return bad("need at least the target feature".into());
        }
        if self.hidden_size == 0 || self.attention_heads == 0 {
            return bad("hidden_size and attention_heads must be >= 1".into());
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

    pub fn n_observed(&self) -> usize {
        self.feature_names.len()
    }

    /// Variables seen by the selection network: observed then calendar.
    pub fn n_variables(&self) -> usize {
        self.n_observed() + TIME_FEATURES.len()
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.feature_names
            .iter()
            .cloned()
            .chain(TIME_FEATURES.iter().map(|s| s.to_string()))
            .collect()
    }

    pub fn n_outputs(&self) -> usize {
        self.output_quantiles.as_ref().map_or(1, QuantileSet::len)
    }
}

/// Head-averaged attention and variable-selection weights of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord<T> {
    /// Row-major `horizon x encoder_len`; each row sums to 1.
    pub attention: Vec<T>,
    /// Row-major `encoder_len x n_variables`; each row sums to 1.
    pub variable_weights: Vec<T>,
    pub encoder_len: usize,
    pub n_variables: usize,
}

impl<T: Scalar> AttentionRecord<T> {
    pub fn attention_rows(&self) -> impl Iterator<Item = &[T]> {
        self.attention.chunks(self.encoder_len)
    }

    pub fn variable_rows(&self) -> impl Iterator<Item = &[T]> {
        self.variable_weights.chunks(self.n_variables)
    }
}

/// Per-variable affine map applied in parallel: `[V, N, in] x [V, in, out]`.
#[derive(Debug, Clone, Copy)]
struct FeatureLinear {
    w: ParamId,
    b: ParamId,
}

impl FeatureLinear {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        v: usize,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            w: store.insert_uniform(format!("{name}.w"), vec![v, fan_in, fan_out], fan_in, rng)?,
            b: store.insert_uniform(format!("{name}.b"), vec![v, 1, fan_out], fan_in, rng)?,
        })
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }
}

/// Gated residual unit with separate weights per variable.
#[derive(Debug, Clone, Copy)]
struct FeatureGrn {
    fc1: FeatureLinear,
    fc2: FeatureLinear,
    gate: FeatureLinear,
    value: FeatureLinear,
}

impl FeatureGrn {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        v: usize,
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            fc1: FeatureLinear::new(store, &format!("{name}.fc1"), v, d, d, rng)?,
            fc2: FeatureLinear::new(store, &format!("{name}.fc2"), v, d, d, rng)?,
            gate: FeatureLinear::new(store, &format!("{name}.gate"), v, d, d, rng)?,
            value: FeatureLinear::new(store, &format!("{name}.value"), v, d, d, rng)?,
        })
    }

    /// `x` is `[V, N, d]`.
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let h = self.fc1.forward(g, store, x)?;
        let h = g.elu(h);
        let h = self.fc2.forward(g, store, h)?;
        let h = dropout(g, h, mode)?;
        let gate = self.gate.forward(g, store, h)?;
        let gate = g.sigmoid(gate);
        let value = self.value.forward(g, store, h)?;
        let glu = g.mul(gate, value)?;
        g.add(x, glu)
    }
}

#[derive(Debug, Clone)]
struct Layout {
    emb_w: ParamId,
    emb_b: ParamId,
    feature_grn: FeatureGrn,
    selection: GatedResidual,
    gru_x: Linear,
    gru_h: Linear,
    query_in: Linear,
    head_q: Vec<Linear>,
    head_k: Vec<Linear>,
    value: Linear,
    attn_out: Linear,
    post: GatedResidual,
    output: Linear,
}

#[derive(Debug, Clone)]
pub struct TftLite<T> {
    cfg: TftConfig,
    params: ParamStore<T>,
    layout: Layout,
}

struct GraphOutput {
    /// `[B, H]` or `[B, H, Q]`.
    forecast: Var,
    /// `[B, H, L]`.
    attention: Var,
    /// `[B*L, V]`.
    selection: Var,
}

impl<T: Scalar> TftLite<T> {
    pub fn new(cfg: TftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut p = ParamStore::new();
        let v = cfg.n_variables();
        let d = cfg.hidden_size;
        let k = TIME_FEATURES.len();
        let r = &mut rng;
        let layout = Layout {
            emb_w: p.insert_uniform("embed.w", vec![v, d], 1, r)?,
            emb_b: p.insert_uniform("embed.b", vec![v, d], 1, r)?,
            feature_grn: FeatureGrn::new(&mut p, "feature_grn", v, d, r)?,
            selection: GatedResidual::new(&mut p, "selection", v * d, d, v, r)?,
            gru_x: Linear::new(&mut p, "gru.input", d, 3 * d, r)?,
            gru_h: Linear::new(&mut p, "gru.hidden", d, 3 * d, r)?,
            query_in: Linear::new(&mut p, "decoder.query_in", k, d, r)?,
            head_q: (0..cfg.attention_heads)
                .map(|i| Linear::new(&mut p, &format!("attention.head{i}.q"), d, d, r))
                .collect::<Result<_>>()?,
            head_k: (0..cfg.attention_heads)
                .map(|i| Linear::new(&mut p, &format!("attention.head{i}.k"), d, d, r))
                .collect::<Result<_>>()?,
            value: Linear::new(&mut p, "attention.value", d, d, r)?,
            attn_out: Linear::new(&mut p, "attention.out", d, d, r)?,
            post: GatedResidual::new(&mut p, "post", d, d, d, r)?,
            output: Linear::new(&mut p, "output", d, cfg.n_outputs(), r)?,
        };
        Ok(Self {
            cfg,
            params: p,
            layout,
        })
    }

    pub fn from_params(cfg: TftConfig, params: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(cfg)?;
        if !model.params.same_layout(&params) {
            return Err(Error::Container(
                "parameter layout does not match the TFT-lite config".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &TftConfig {
        &self.cfg
    }

    fn check_batch(&self, batch: &Batch<T>) -> Result<()> {
        if batch.encoder_len != self.cfg.encoder_len
            || batch.horizon != self.cfg.horizon
            || batch.n_features != self.cfg.n_observed()
            || batch.n_known != TIME_FEATURES.len()
        {
            return Err(Error::Shape {
                op: "tft_forward",
                lhs: vec![self.cfg.encoder_len, self.cfg.horizon, self.cfg.n_observed()],
                rhs: vec![batch.encoder_len, batch.horizon, batch.n_features],
            });
        }
        Ok(())
    }

    fn forward_graph(&self, g: &mut Graph<T>, batch: &Batch<T>, mode: &mut Mode<'_>) -> Result<GraphOutput> {
        self.check_batch(batch)?;
        let (b, l, h) = (batch.size, self.cfg.encoder_len, self.cfg.horizon);
        let (f, k) = (batch.n_features, batch.n_known);
        let v = f + k;
        let d = self.cfg.hidden_size;
        let n = b * l;
        let lay = &self.layout;
        let p = &self.params;

        // Variable embeddings, [N, V, d].
        let obs = g.constant(vec![b, l, f], batch.encoder.clone())?;
        let cal = g.constant(vec![b, l, k], batch.known_past.clone())?;
        let x = g.concat(&[obs, cal], 2)?;
        let x = g.reshape(x, vec![n, v, 1])?;
        let emb_w = g.param(p, lay.emb_w);
        let emb_b = g.param(p, lay.emb_b);
        let e = g.mul(x, emb_w)?;
        let e = g.add(e, emb_b)?;

        let e_t = g.permute(e, &[1, 0, 2])?;
        let refined = lay.feature_grn.forward(g, p, e_t, mode)?;
        let refined = g.permute(refined, &[1, 0, 2])?;

        // Selection weights over variables, [N, V].
        let flat = g.reshape(e, vec![n, v * d])?;
        let logits = lay.selection.forward(g, p, flat, mode)?;
        let weights = g.softmax(logits)?;
        let w3 = g.reshape(weights, vec![n, 1, v])?;
        let mixed = g.matmul(w3, refined)?;
        let mixed = g.reshape(mixed, vec![b, l, d])?;

        // GRU encoder.
        let xg = lay.gru_x.forward(g, p, mixed)?;
        let mut hidden = g.constant(vec![b, d], vec![T::zero(); b * d])?;
        let mut states = Vec::with_capacity(l);
        for t in 0..l {
            let xt = g.slice(xg, 1, t, 1)?;
            let xt = g.reshape(xt, vec![b, 3 * d])?;
            let hg = lay.gru_h.forward(g, p, hidden)?;
            let xz = g.slice(xt, 1, 0, d)?;
            let xr = g.slice(xt, 1, d, d)?;
            let xn = g.slice(xt, 1, 2 * d, d)?;
            let hz = g.slice(hg, 1, 0, d)?;
            let hr = g.slice(hg, 1, d, d)?;
            let hn = g.slice(hg, 1, 2 * d, d)?;
            let z = g.add(xz, hz)?;
            let z = g.sigmoid(z);
            let r = g.add(xr, hr)?;
            let r = g.sigmoid(r);
            let rh = g.mul(r, hn)?;
            let cand = g.add(xn, rh)?;
            let cand = g.tanh(cand);
            let keep = g.mul(z, hidden)?;
            let one_minus_z = g.one_minus(z);
            let upd = g.mul(one_minus_z, cand)?;
            hidden = g.add(upd, keep)?;
            states.push(g.reshape(hidden, vec![b, 1, d])?);
        }
        let enc = g.concat(&states, 1)?;

        // Decoder queries from calendar features plus the final state.
        let fut = g.constant(vec![b, h, k], batch.known_future.clone())?;
        let q_in = lay.query_in.forward(g, p, fut)?;
        let last = g.reshape(hidden, vec![b, 1, d])?;
        let q_in = g.add(q_in, last)?;

        let inv_sqrt = T::lit(1.0 / (d as f64).sqrt());
        let mut avg: Option<Var> = None;
        for (hq, hk) in lay.head_q.iter().zip(&lay.head_k) {
            let q = hq.forward(g, p, q_in)?;
            let kk = hk.forward(g, p, enc)?;
            let kt = g.transpose(kk)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, inv_sqrt);
            let a = g.softmax(scores)?;
            avg = Some(match avg {
                Some(acc) => g.add(acc, a)?,
                None => a,
            });
        }
        let attention = g.scale(
            avg.expect("attention_heads >= 1"),
            T::lit(1.0 / self.cfg.attention_heads as f64),
        );
        let values = lay.value.forward(g, p, enc)?;
        let ctx = g.matmul(attention, values)?;
        let ctx = lay.attn_out.forward(g, p, ctx)?;
        let ctx = dropout(g, ctx, mode)?;
        let y = g.add(q_in, ctx)?;
        let y = lay.post.forward(g, p, y, mode)?;
        let out = lay.output.forward(g, p, y)?;
        let forecast = if self.cfg.output_quantiles.is_some() {
            out
        } else {
            g.reshape(out, vec![b, h])?
        };
        Ok(GraphOutput {
            forecast,
            attention,
            selection: weights,
        })
    }

    /// Forecast bundles with attention records, in eval mode.
    fn run(&self, batch: &Batch<T>) -> Result<Vec<ForecastBundle<T>>> {
        let mut g = Graph::new();
        let out = self.forward_graph(&mut g, batch, &mut Mode::Eval)?;
        let nq = self.cfg.output_quantiles.as_ref().map_or(0, QuantileSet::len);
        let median = self.cfg.output_quantiles.as_ref().and_then(QuantileSet::median_index);
        let mut bundles = bundles_from_output(
            g.value(out.forecast).values(),
            batch.size,
            self.cfg.horizon,
            nq,
            median,
        );
        let (l, h, v) = (self.cfg.encoder_len, self.cfg.horizon, self.cfg.n_variables());
        let att = g.value(out.attention).values();
        let sel = g.value(out.selection).values();
        for (i, bundle) in bundles.iter_mut().enumerate() {
            bundle.attention = Some(AttentionRecord {
                attention: att[i * h * l..(i + 1) * h * l].to_vec(),
                variable_weights: sel[i * l * v..(i + 1) * l * v].to_vec(),
                encoder_len: l,
                n_variables: v,
            });
        }
        Ok(bundles)
    }
}

impl<T: Scalar> Forecaster<T> for TftLite<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::TftLite
    }

    fn forecast_batch(&self, batch: &Batch<T>) -> Result<Vec<ForecastBundle<T>>> {
        self.run(batch)
    }
}

impl<T: Scalar> Trainable<T> for TftLite<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn batch_loss(&self, g: &mut Graph<T>, batch: &Batch<T>, mode: &mut Mode<'_>) -> Result<Var> {
        let out = self.forward_graph(g, batch, mode)?;
        match &self.cfg.output_quantiles {
            None => mase_graph(g, out.forecast, &batch.target, &batch.scales),
            Some(q) => quantile_graph(g, out.forecast, &batch.target, q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub percent: f64,
}

/// Mean variable-selection weight per variable over all samples and
/// encoder steps, in percent, sorted descending.
pub fn feature_importance<T: Scalar>(
    model: &TftLite<T>,
    set: &WindowSet,
    batch_size: usize,
) -> Result<Vec<FeatureImportance>> {
    if set.is_empty() {
        return Err(Error::Empty("feature importance needs validation samples"));
    }
    let names = model.cfg.variable_names();
    let mut totals = vec![0.0f64; names.len()];
    let mut rows = 0usize;
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        for bundle in model.forecast(set, chunk)? {
            let rec = bundle.attention.expect("tft bundles carry attention");
            for row in rec.variable_rows() {
                for (t, &w) in totals.iter_mut().zip(row) {
                    *t += w.to_f64_lossy();
                }
                rows += 1;
            }
        }
    }
    let mut out: Vec<FeatureImportance> = names
        .into_iter()
        .zip(totals)
        .map(|(feature, t)| FeatureImportance {
            feature,
            percent: 100.0 * t / rows as f64,
        })
        .collect();
    out.sort_by(|a, b| b.percent.total_cmp(&a.percent).then_with(|| a.feature.cmp(&b.feature)));
    Ok(out)
}

/// Mean attention over samples: row-major `horizon x encoder_len`.
pub fn mean_attention<T: Scalar>(model: &TftLite<T>, set: &WindowSet, batch_size: usize) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::Empty("attention summary needs samples"));
    }
    let (h, l) = (model.cfg.horizon, model.cfg.encoder_len);
    let mut acc = vec![0.0; h * l];
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        for bundle in model.forecast(set, chunk)? {
            let rec = bundle.attention.expect("tft bundles carry attention");
            for (a, &w) in acc.iter_mut().zip(&rec.attention) {
                *a += w.to_f64_lossy();
            }
        }
    }
    let n = set.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}
