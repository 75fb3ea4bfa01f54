//! Training objectives: scaled absolute error (MASE) and pinball loss.
//!
//! Each objective exists twice: a plain function over slices used for
//! evaluation and reporting, and a graph builder used for training.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower clamp on the MASE scaling denominator.
pub const MASE_EPS: f64 = 1e-8;

/// Strictly increasing quantile levels in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileSet(Vec<f64>);

impl QuantileSet {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("quantile set is empty".into()));
        }
        if levels.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return Err(Error::Config(format!("quantiles must lie in (0, 1): {levels:?}")));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "quantiles must be strictly increasing: {levels:?}"
            )));
        }
        Ok(Self(levels))
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Column holding the 0.5 level, if present.
    pub fn median_index(&self) -> Option<usize> {
        self.0.iter().position(|&q| q == 0.5)
    }
}

impl Default for QuantileSet {
    fn default() -> Self {
        Self(vec![0.02, 0.1, 0.25, 0.5, 0.75, 0.9, 0.98])
    }
}

impl TryFrom<Vec<f64>> for QuantileSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QuantileSet> for Vec<f64> {
    fn from(q: QuantileSet) -> Self {
        q.0
    }
}

/// Which objective a model is trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Mase,
    Quantile {
        #[serde(default)]
        quantiles: QuantileSet,
    },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mase => "mase",
            LossKind::Quantile { .. } => "quantile",
        }
    }

    pub fn quantiles(&self) -> Option<&QuantileSet> {
        match self {
            LossKind::Mase => None,
            LossKind::Quantile { quantiles } => Some(quantiles),
        }
    }
}

/// Mean absolute one-step difference of the encoder history, clamped below
/// at [`MASE_EPS`].
pub fn naive_scale<T: Scalar>(encoder_target: &[T]) -> T {
    let n = encoder_target.len();
    if n < 2 {
        return T::lit(MASE_EPS);
    }
    let total: T = encoder_target
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .sum();
    (total / T::lit((n - 1) as f64)).max(T::lit(MASE_EPS))
}

pub fn mase<T: Scalar>(pred: &[T], target: &[T], encoder_target: &[T]) -> T {
    let n = T::lit(pred.len().max(1) as f64);
    let err: T = pred.iter().zip(target).map(|(&p, &y)| (y - p).abs()).sum();
    err / n / naive_scale(encoder_target)
}

/// `max(q (y - yhat), (q - 1)(y - yhat))`. Generic over any ordered
/// field, so exact rationals work as well as floats.
pub fn pinball<T>(y: T, yhat: T, q: T) -> T
where
    T: num_traits::Num + PartialOrd + Copy,
{
    let d = y - yhat;
    let a = q * d;
    let b = (q - T::one()) * d;
    if a >= b {
        a
    } else {
        b
    }
}

/// Mean pinball loss; `pred` is row-major `H x Q`.
pub fn quantile_loss<T: Scalar>(pred: &[T], target: &[T], q: &QuantileSet) -> T {
    let nq = q.len();
    let mut total = T::zero();
    for (row, &y) in pred.chunks(nq).zip(target) {
        for (&p, &level) in row.iter().zip(q.levels()) {
            total += pinball(y, p, T::lit(level));
        }
    }
    total / T::lit((target.len() * nq).max(1) as f64)
}

/// Batch-mean MASE. `pred` is `[B, H]`, `target` row-major `B x H`, and
/// `scales` holds one [`naive_scale`] per sample.
pub fn mase_graph<T: Scalar>(g: &mut Graph<T>, pred: Var, target: &[T], scales: &[T]) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    let y = g.constant(shape.clone(), target.to_vec())?;
    let inv = g.constant(
        vec![shape[0], 1],
        scales.iter().map(|&s| T::one() / s).collect(),
    )?;
    let d = g.sub(pred, y)?;
    let a = g.abs(d);
    let scaled = g.mul(a, inv)?;
    Ok(g.mean(scaled))
}

/// Mean pinball loss over `[B, H, Q]` predictions.
///
/// Uses `max(q d, (q - 1) d) = q d + relu(-d)` with `d = y - yhat`.
pub fn quantile_graph<T: Scalar>(g: &mut Graph<T>, pred: Var, target: &[T], q: &QuantileSet) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    if shape.len() != 3 || shape[2] != q.len() {
        return Err(Error::Shape {
            op: "quantile_loss",
            lhs: shape,
            rhs: vec![q.len()],
        });
    }
    let y = g.constant(vec![shape[0], shape[1], 1], target.to_vec())?;
    let levels = g.constant(vec![q.len()], q.levels().iter().map(|&l| T::lit(l)).collect())?;
    let d = g.sub(y, pred)?;
    let qd = g.mul(d, levels)?;
    let nd = g.neg(d);
    let r = g.relu(nd);
    let total = g.add(qd, r)?;
    Ok(g.mean(total))
}

/// MASE-scaled absolute error without the 1/H mean, for arbitrary-length
/// sequences such as the backcast: `mean(|pred - target| / scale)`.
pub fn scaled_abs_graph<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, scales: &[T]) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    let inv = g.constant(
        vec![shape[0], 1],
        scales.iter().map(|&s| T::one() / s).collect(),
    )?;
    let d = g.sub(pred, target)?;
    let a = g.abs(d);
    let scaled = g.mul(a, inv)?;
    Ok(g.mean(scaled))
}
