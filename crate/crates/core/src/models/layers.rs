use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// Forward-pass mode. Dropout is active only in `Train`.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng, dropout: f64 },
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - p)`.
pub fn dropout<T: Scalar>(g: &mut Graph<T>, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
    let Mode::Train { rng, dropout } = mode else {
        return Ok(x);
    };
    let p = *dropout;
    if p <= 0.0 {
        return Ok(x);
    }
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let keep = T::lit(1.0 / (1.0 - p));
    let mask = (0..n)
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
        .collect();
    let m = g.constant(shape, mask)?;
    g.mul(x, m)
}

/// Affine map over the last axis: `x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = store.insert_uniform(format!("{name}.w"), vec![fan_in, fan_out], fan_in, rng)?;
        let b = store.insert_uniform(format!("{name}.b"), vec![fan_out], fan_in, rng)?;
        Ok(Self {
            w,
            b,
            fan_in,
            fan_out,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }
}

/// Gated residual unit: `skip(a) + GLU(W2 ELU(W1 a + b1) + b2)` where the
/// gated linear unit is `sigmoid(W4 h + b4) * (W5 h + b5)`.
#[derive(Debug, Clone, Copy)]
pub struct GatedResidual {
    hidden: Linear,
    out: Linear,
    gate: Linear,
    value: Linear,
    skip: Option<Linear>,
}

impl GatedResidual {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.fc1"), input, hidden, rng)?,
            out: Linear::new(store, &format!("{name}.fc2"), hidden, hidden, rng)?,
            gate: Linear::new(store, &format!("{name}.gate"), hidden, output, rng)?,
            value: Linear::new(store, &format!("{name}.value"), hidden, output, rng)?,
            skip: if input == output {
                None
            } else {
                Some(Linear::new(store, &format!("{name}.skip"), input, output, rng)?)
            },
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        a: Var,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let h = self.hidden.forward(g, store, a)?;
        let h = g.elu(h);
        let h = self.out.forward(g, store, h)?;
        let h = dropout(g, h, mode)?;
        let gate = self.gate.forward(g, store, h)?;
        let gate = g.sigmoid(gate);
        let value = self.value.forward(g, store, h)?;
        let glu = g.mul(gate, value)?;
        let skip = match &self.skip {
            Some(s) => s.forward(g, store, a)?,
            None => a,
        };
        g.add(skip, glu)
    }
}
