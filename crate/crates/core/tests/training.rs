mod common;

use std::cell::Cell;

use cso_forecast::autodiff::{Graph, ParamStore, Tensor, Var};
use cso_forecast::models::nhits::{NHits, NHitsConfig};
use cso_forecast::models::{Mode, Trainable};
use cso_forecast::training::{clip_global_norm, train, train_with_observer, Fit, TrainConfig, WindowFit};
use cso_forecast::Result;
use proptest::prelude::*;

use common::sewer_windows;

/// Three weights pulled towards per-sample targets. The validation loss is
/// either the distance to `val_anchor` or a scripted sequence.
struct Toy {
    params: ParamStore<f64>,
    data: Vec<[f64; 3]>,
    val_anchor: [f64; 3],
    script: Option<Vec<f64>>,
    calls: Cell<usize>,
}

impl Toy {
    fn new(data: Vec<[f64; 3]>, val_anchor: [f64; 3]) -> Self {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::vector(vec![0.5, -0.5, 0.0])).unwrap();
        Self {
            params,
            data,
            val_anchor,
            script: None,
            calls: Cell::new(0),
        }
    }

    fn weights(&self) -> Vec<f64> {
        self.params.flat_values()
    }
}

impl Fit<f64> for Toy {
    fn params(&self) -> &ParamStore<f64> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.params
    }

    fn n_train(&self) -> usize {
        self.data.len()
    }

    fn train_loss(&self, g: &mut Graph<f64>, idx: &[usize], _mode: &mut Mode<'_>) -> Result<Var> {
        let id = self.params.id("w").unwrap();
        let w = g.param(&self.params, id);
        let mut flat = Vec::with_capacity(idx.len() * 3);
        for &i in idx {
            flat.extend_from_slice(&self.data[i]);
        }
        let y = g.constant(vec![idx.len(), 3], flat)?;
        let d = g.sub(w, y)?;
        let sq = g.mul(d, d)?;
        Ok(g.mean(sq))
    }

    fn val_loss(&self) -> Result<f64> {
        let k = self.calls.get();
        self.calls.set(k + 1);
        if let Some(s) = &self.script {
            return Ok(s[k]);
        }
        let w = self.weights();
        Ok(w.iter().zip(&self.val_anchor).map(|(a, b)| (a - b) * (a - b)).sum())
    }
}

fn toy_data(n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|i| {
            let x = i as f64 / n as f64;
            [2.0 + x, -1.0 + 0.5 * x, 3.0 - x]
        })
        .collect()
}

fn cfg(epochs: usize, patience: usize, swa: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        dropout: 0.0,
        weight_decay: 0.01,
        gradient_clip: 0.5,
        batch_size: 4,
        max_epochs: epochs,
        early_stop_patience: patience,
        swa_start_fraction: swa,
        seed: 17,
    }
}

#[test]
fn swa_average_is_the_mean_of_snapshots() {
    let mut toy = Toy::new(toy_data(20), [2.5, -0.75, 2.5]);
    let c = cfg(12, 100, 0.5);
    let mut snapshots: Vec<Vec<f64>> = Vec::new();
    let out = train_with_observer(&mut toy, &c, |ev| {
        if ev.record.swa_active {
            snapshots.push(ev.params.flat_values());
        }
    })
    .unwrap();
    assert_eq!(c.swa_start_epoch(), 6);
    assert_eq!(snapshots.len(), 7);
    let avg = out.swa_average.unwrap();
    for (j, a) in avg.iter().enumerate() {
        let mean = snapshots.iter().map(|s| s[j]).sum::<f64>() / snapshots.len() as f64;
        assert!((a - mean).abs() <= 1e-12, "{a} vs {mean}");
    }
}

#[test]
fn early_stop_restores_the_best_checkpoint_on_rising_validation_loss() {
    let mut toy = Toy::new(toy_data(16), [0.0; 3]);
    toy.script = Some((0..50).map(|e| 1.0 + e as f64).collect());
    let mut seen = Vec::new();
    let out = train_with_observer(&mut toy, &cfg(50, 3, 0.9), |ev| seen.push(ev.params.flat_values())).unwrap();
    assert_eq!(out.log.best_epoch, 1);
    assert!(out.log.stopped_early);
    assert_eq!(out.log.epochs.len(), 4);
    assert_eq!(toy.weights(), seen[0]);
}

#[test]
fn returned_parameters_are_never_worse_than_a_checkpoint() {
    // Training pulls away from the validation anchor, so the loss rises.
    let mut toy = Toy::new(toy_data(16), [0.5, -0.5, 0.0]);
    let out = train(&mut toy, &cfg(30, 5, 0.5)).unwrap();
    let best = out.log.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    let final_loss = toy.val_loss().unwrap();
    assert_eq!(final_loss, best);
    assert_eq!(best, out.log.best_val_loss);
}

#[test]
fn training_is_bit_reproducible() {
    let set = sewer_windows(500, 12, 4, 3);
    let train_set = set.subset(0..300);
    let val_set = set.subset(300..set.len());
    let run = || {
        let cfg_m = NHitsConfig {
            hidden_size: 16,
            n_stacks: 2,
            pooling_sizes: vec![1, 4],
            downsample_ratios: vec![1, 2],
            dropout: 0.1,
            seed: 5,
            ..NHitsConfig::new(12, 4, set.n_features() - 1)
        };
        let model: NHits<f64> = NHits::new(cfg_m).unwrap();
        let mut fit = WindowFit::new(model, &train_set, &val_set, 32);
        let c = TrainConfig {
            max_epochs: 3,
            dropout: 0.1,
            ..cfg(3, 10, 0.5)
        };
        let out = train(&mut fit, &c).unwrap();
        (out.log, fit.model.params().flat_values())
    };
    let (la, pa) = run();
    let (lb, pb) = run();
    assert_eq!(la, lb);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&pa), bits(&pb));
}

proptest! {
    #[test]
    fn clipping_keeps_direction(g in prop::collection::vec(-100.0f64..100.0, 1..40), max in 1e-3f64..50.0) {
        let mut clipped = g.clone();
        let (before, after) = clip_global_norm(&mut clipped, max);
        prop_assert!(after <= max * (1.0 + 1e-12) || before <= max);
        if before > 0.0 {
            let s = clipped.iter().zip(&g).find(|(_, o)| **o != 0.0).map(|(c, o)| c / o).unwrap();
            prop_assert!(s > 0.0);
            for (c, o) in clipped.iter().zip(&g) {
                prop_assert!((c - s * o).abs() <= 1e-12 * o.abs().max(1.0));
            }
        }
    }
}

#[test]
fn non_finite_loss_is_reported() {
    let mut toy = Toy::new(vec![[f64::NAN, 0.0, 0.0]; 4], [0.0; 3]);
    let err = train(&mut toy, &cfg(2, 2, 0.5)).unwrap_err();
    assert!(matches!(err, cso_forecast::Error::NonFinite(_)), "{err}");
}
