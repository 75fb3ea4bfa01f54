mod common;

use std::collections::BTreeSet;

use cso_forecast::autodiff::{grad_check, GradCheckOptions, Graph, OpKind, ParamStore, Tensor};
use cso_forecast::losses::QuantileSet;
use cso_forecast::models::nhits::{NHits, NHitsConfig};
use cso_forecast::models::tft::{TftConfig, TftLite};
use cso_forecast::models::{Batch, Mode, Trainable};
use rand::seq::SliceRandom;

use common::{rng, sewer_windows, uniform};

struct Case {
    kind: OpKind,
    shapes: Vec<Vec<usize>>,
    /// Keep inputs at least 0.1 away from zero (relu and abs kinks).
    away_from_zero: bool,
    /// Distinct, well separated inputs (max-pool ties).
    spread: bool,
}

fn case(kind: OpKind, shapes: &[&[usize]]) -> Case {
    Case {
        kind,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        away_from_zero: false,
        spread: false,
    }
}

fn cases() -> Vec<Case> {
    let mut out = vec![
        case(OpKind::MatMul, &[&[3, 4], &[4, 2]]),
        case(OpKind::MatMul, &[&[2, 3, 4], &[4, 2]]),
        case(OpKind::MatMul, &[&[2, 3, 4], &[2, 4, 5]]),
        case(OpKind::Add, &[&[2, 3], &[3]]),
        case(OpKind::Add, &[&[2, 1, 4], &[3, 1]]),
        case(OpKind::Sub, &[&[2, 3], &[2, 1]]),
        case(OpKind::Mul, &[&[2, 3], &[2, 3]]),
        case(OpKind::Mul, &[&[4, 3], &[1, 3]]),
        case(OpKind::Scale(-1.7), &[&[2, 3]]),
        case(OpKind::AddScalar(0.3), &[&[5]]),
        case(OpKind::Elu, &[&[3, 4]]),
        case(OpKind::Sigmoid, &[&[3, 4]]),
        case(OpKind::Tanh, &[&[3, 4]]),
        case(OpKind::Softmax, &[&[3, 5]]),
        case(OpKind::Softmax, &[&[2, 2, 4]]),
        case(OpKind::Interp1d { len: 7 }, &[&[2, 3]]),
        case(OpKind::Interp1d { len: 4 }, &[&[2, 1]]),
        case(OpKind::Concat { axis: 1 }, &[&[2, 3], &[2, 2]]),
        case(OpKind::Concat { axis: 0 }, &[&[1, 3], &[2, 3]]),
        case(OpKind::Slice { axis: 1, start: 1, len: 2 }, &[&[3, 4]]),
        case(OpKind::Reshape(vec![6, 2]), &[&[3, 4]]),
        case(OpKind::Permute(vec![2, 0, 1]), &[&[2, 3, 4]]),
        case(OpKind::Sum, &[&[3, 4]]),
        case(OpKind::Mean, &[&[3, 4]]),
    ];
    for kind in [OpKind::Relu, OpKind::Abs] {
        let mut c = case(kind, &[&[4, 5]]);
        c.away_from_zero = true;
        out.push(c);
    }
    for (kernel, len) in [(2, 8), (3, 7), (4, 5)] {
        let mut c = case(OpKind::MaxPool1d { kernel }, &[&[2, len]]);
        c.spread = true;
        out.push(c);
    }
    out
}

fn build_params(c: &Case, seed: u64) -> ParamStore<f64> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    for (i, shape) in c.shapes.iter().enumerate() {
        let n: usize = shape.iter().product();
        let mut v = uniform(&mut r, n);
        if c.away_from_zero {
            v.iter_mut().for_each(|x| *x = x.signum() * (0.1 + x.abs()));
        }
        if c.spread {
            let mut ranks: Vec<usize> = (0..n).collect();
            ranks.shuffle(&mut r);
            v = ranks.iter().map(|&k| 0.1 * k as f64).collect();
        }
        store.insert(format!("x{i}"), Tensor::new(shape.clone(), v).unwrap()).unwrap();
    }
    store
}

#[test]
fn every_op_kind_matches_central_differences() {
    let all = cases();
    let covered: BTreeSet<&str> = all.iter().map(|c| c.kind.name()).collect();
    let expected: BTreeSet<&str> = [
        "matmul", "add", "sub", "mul", "scale", "add_scalar", "relu", "elu", "sigmoid", "tanh", "abs", "softmax",
        "max_pool_1d", "interp_1d", "concat", "slice", "reshape", "permute", "sum", "mean",
    ]
    .into_iter()
    .collect();
    assert_eq!(covered, expected);

    for (k, c) in all.iter().enumerate() {
        let mut store = build_params(c, 100 + k as u64);
        let ids: Vec<_> = store.ids().collect();
        let weight_seed = 7_000 + k as u64;
        let f = |g: &mut Graph<f64>, p: &ParamStore<f64>| {
            let xs: Vec<_> = ids.iter().map(|&id| g.param(p, id)).collect();
            let y = g.apply(&c.kind, &xs)?;
            let shape = g.shape(y).to_vec();
            let n = g.value(y).len();
            let w = g.constant(shape, uniform(&mut rng(weight_seed), n))?;
            let yw = g.mul(y, w)?;
            Ok(g.sum(yw))
        };
        let report = grad_check(f, &mut store, &GradCheckOptions::default()).unwrap();
        assert!(
            report.passed(),
            "{} {:?}: max deviation {:e}",
            c.kind.name(),
            c.shapes,
            report.max_deviation()
        );
    }
}

fn nhits_cfg(n_cov: usize, quantiles: Option<QuantileSet>) -> NHitsConfig {
    NHitsConfig {
        n_stacks: 2,
        pooling_sizes: vec![1, 2],
        downsample_ratios: vec![1, 2],
        hidden_size: 8,
        dropout: 0.0,
        output_quantiles: quantiles,
        seed: 3,
        ..NHitsConfig::new(12, 4, n_cov)
    }
}

#[test]
fn nhits_two_stacks_hidden_eight() {
    let set = sewer_windows(400, 12, 4, 5);
    let batch: Batch<f64> = Batch::from_windows(&set, &[0, 17, 40, 90]).unwrap();
    for q in [None, Some(QuantileSet::default())] {
        let cfg = nhits_cfg(set.n_features() - 1, q);
        let model: NHits<f64> = NHits::new(cfg.clone()).unwrap();
        let mut store = model.params().clone();
        let f = |g: &mut Graph<f64>, p: &ParamStore<f64>| {
            let m = NHits::from_params(cfg.clone(), p.clone())?;
            m.batch_loss(g, &batch, &mut Mode::Eval)
        };
        let report = grad_check(f, &mut store, &GradCheckOptions::default()).unwrap();
        let bad: Vec<_> = report.failures().map(|t| (&t.name, t.max_deviation)).collect();
        assert!(report.passed(), "{bad:?}");
    }
}

#[test]
fn tft_hidden_four_two_heads_encoder_eight() {
    let set = sewer_windows(400, 8, 3, 6);
    let batch: Batch<f64> = Batch::from_windows(&set, &[1, 30, 77]).unwrap();
    let cfg = TftConfig {
        hidden_size: 4,
        attention_heads: 2,
        dropout: 0.0,
        seed: 9,
        ..TftConfig::new(8, 3, set.features.clone())
    };
    let model: TftLite<f64> = TftLite::new(cfg.clone()).unwrap();
    let mut store = model.params().clone();
    let f = |g: &mut Graph<f64>, p: &ParamStore<f64>| {
        let m = TftLite::from_params(cfg.clone(), p.clone())?;
        m.batch_loss(g, &batch, &mut Mode::Eval)
    };
    let report = grad_check(f, &mut store, &GradCheckOptions::default()).unwrap();
    let bad: Vec<_> = report.failures().map(|t| (&t.name, t.max_deviation)).collect();
    assert!(report.passed(), "{bad:?}");
}

#[test]
fn unused_parameter_keeps_zero_gradient() {
    let mut store: ParamStore<f64> = ParamStore::new();
    let a = store.insert("a", Tensor::vector(vec![1.0, -2.0])).unwrap();
    let b = store.insert("b", Tensor::vector(vec![3.0])).unwrap();
    let mut g = Graph::new();
    let x = g.param(&store, a);
    let _ = g.param(&store, b);
    let y = g.tanh(x);
    let loss = g.sum(y);
    g.backward(loss, &mut store).unwrap();
    assert!(store.get(b).grad().is_none_or(|gr| gr.iter().all(|&v| v == 0.0)));
    assert!(store.get(a).grad().unwrap().iter().all(|&v| v != 0.0));
}

#[test]
fn forward_is_bit_deterministic() {
    for (k, c) in cases().iter().enumerate() {
        let store = build_params(c, 300 + k as u64);
        let run = || {
            let mut g = Graph::new();
            let xs: Vec<_> = store.ids().map(|id| g.param(&store, id)).collect();
            let y = g.apply(&c.kind, &xs).unwrap();
            g.value(y).values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run(), "{}", c.kind.name());
    }
}

#[test]
fn f32_models_run() {
    let set = sewer_windows(300, 12, 4, 2);
    let batch: Batch<f32> = Batch::from_windows(&set, &[0, 1]).unwrap();
    let nh: NHits<f32> = NHits::new(nhits_cfg(set.n_features() - 1, None)).unwrap();
    let out = nh.forward_raw(&batch).unwrap();
    assert!(out.iter().all(|o| o.forecast.iter().all(|v| v.is_finite())));
    let mut g = Graph::new();
    let loss = nh.batch_loss(&mut g, &batch, &mut Mode::Eval).unwrap();
    assert!(g.value(loss).item().is_finite());
}
