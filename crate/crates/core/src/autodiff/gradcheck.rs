//! Central-difference gradient checker.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Deviations are `|analytic - numeric| / max(|analytic|, |numeric|, DEVIATION_FLOOR)`.
pub const DEVIATION_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Check at most this many entries per tensor (sampled with `seed`).
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            max_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_deviation: f64,
    pub exceeds_tol: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tol: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| !t.exceeds_tol)
    }

    pub fn max_deviation(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_deviation)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| t.exceeds_tol)
    }
}

fn eval<T: Scalar, F>(f: &F, params: &ParamStore<T>) -> Result<f64>
where
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let v = g.value(loss).item().to_f64_lossy();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("grad_check loss = {v}")));
    }
    Ok(v)
}

/// Compares the analytic gradient of `f` with central differences, one
/// parameter entry at a time. `params` is restored before returning.
pub fn grad_check<T: Scalar, F>(
    f: F,
    params: &mut ParamStore<T>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    if opts.eps <= 0.0 {
        return Err(Error::Config(format!("grad_check eps must be > 0, got {}", opts.eps)));
    }
    params.zero_grad();
    {
        let mut g = Graph::new();
        let loss = f(&mut g, params)?;
        let v = g.value(loss).item().to_f64_lossy();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("grad_check loss = {v}")));
        }
        g.backward(loss, params)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<_> = params.ids().collect();
    let mut tensors = Vec::with_capacity(ids.len());
    for id in ids {
        let n = params.get(id).len();
        let analytic: Vec<f64> = match params.get(id).grad() {
            Some(g) => g.iter().map(|x| x.to_f64_lossy()).collect(),
            None => vec![0.0; n],
        };
        let entries: Vec<usize> = match opts.max_per_tensor {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        for &i in &entries {
            let orig = params.get(id).values()[i];
            params.get_mut(id).values_mut()[i] = orig + T::lit(opts.eps);
            let plus = eval(&f, params);
            params.get_mut(id).values_mut()[i] = orig - T::lit(opts.eps);
            let minus = eval(&f, params);
            params.get_mut(id).values_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.eps);
            let a = analytic[i];
            let dev = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DEVIATION_FLOOR);
            worst = worst.max(dev);
        }
        tensors.push(TensorCheck {
            name: params.name(id).to_string(),
            checked: entries.len(),
            max_deviation: worst,
            exceeds_tol: worst > opts.tol,
        });
    }
    params.zero_grad();
    Ok(GradCheckReport {
        tol: opts.tol,
        tensors,
    })
}
