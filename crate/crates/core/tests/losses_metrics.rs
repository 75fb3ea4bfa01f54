use cso_forecast::losses::{mase, naive_scale, pinball, quantile_loss, QuantileSet, MASE_EPS};
use cso_forecast::metrics::{monotonic_rearrange, point_metrics};
use num_rational::Ratio;
use proptest::prelude::*;

#[test]
fn pinball_hand_values_are_exact_in_rationals() {
    let r = |n: i64, d: i64| Ratio::new(n, d);
    assert_eq!(pinball(r(10, 1), r(8, 1), r(9, 10)), r(18, 10));
    assert_eq!(pinball(r(10, 1), r(12, 1), r(9, 10)), r(2, 10));
}

#[test]
fn mase_examples() {
    let enc = [0.0, 1.0, 2.0, 3.0];
    assert_eq!(naive_scale(&enc), 1.0f64);
    assert_eq!(mase(&[1.0, 2.0], &[1.0, 2.0], &enc), 0.0);
    assert_eq!(mase(&[0.0, 5.0, 1.0], &[2.0, 3.0, 3.0], &enc), 2.0);
    let flat: f64 = mase(&[0.0], &[1.0], &[4.0, 4.0, 4.0]);
    assert!(flat.is_finite());
    assert_eq!(flat, 1.0 / MASE_EPS);
}

#[test]
fn point_metric_examples() {
    let m = point_metrics(&[0.0; 4], &[1.0, -1.0, 1.0, -1.0]).unwrap();
    assert_eq!((m.mae, m.rmse), (1.0, 1.0));
    let m = point_metrics(&[0.0; 3], &[0.0, 0.0, 4.0]).unwrap();
    assert!((m.mae - 4.0 / 3.0).abs() < 1e-15);
    assert!((m.rmse - (16.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert!(point_metrics(&[], &[]).is_err());
}

#[test]
fn rearrange_examples() {
    assert_eq!(monotonic_rearrange(&[3.0, 2.0, 5.0], 3), vec![2.0, 3.0, 5.0]);
    assert_eq!(monotonic_rearrange(&[1.0, 2.0, 5.0], 3), vec![1.0, 2.0, 5.0]);
}

fn mean_pinball(ys: &[f64], c: f64, q: f64) -> f64 {
    ys.iter().map(|&y| pinball(y, c, q)).sum::<f64>() / ys.len() as f64
}

proptest! {
    #[test]
    fn median_pinball_is_half_mae(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..64)) {
        let (pred, target): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let q = QuantileSet::new(vec![0.5]).unwrap();
        let loss = quantile_loss(&pred, &target, &q);
        let mae = point_metrics(&pred, &target).unwrap().mae;
        prop_assert!((loss - 0.5 * mae).abs() <= 1e-12 * mae.max(1.0));
    }

    #[test]
    fn constant_pinball_minimizer_is_the_empirical_quantile(
        ys in prop::collection::vec(-10.0f64..10.0, 25),
        qi in 0usize..7,
    ) {
        let q = QuantileSet::default().levels()[qi];
        let mut sorted = ys.clone();
        sorted.sort_by(f64::total_cmp);
        let n = ys.len() as f64;
        // With n*q not an integer the minimizer is the unique order statistic ceil(n q).
        prop_assume!((n * q).fract() != 0.0);
        let empirical = sorted[(n * q).ceil() as usize - 1];
        let step = 1e-3;
        let (mut best_c, mut best) = (f64::NAN, f64::INFINITY);
        let mut c = -11.0;
        while c <= 11.0 {
            let v = mean_pinball(&ys, c, q);
            if v < best {
                best = v;
                best_c = c;
            }
            c += step;
        }
        prop_assert!((best_c - empirical).abs() <= step, "grid {} vs quantile {}", best_c, empirical);
    }

    #[test]
    fn mase_is_scale_invariant(
        pred in prop::collection::vec(-10.0f64..10.0, 5),
        target in prop::collection::vec(-10.0f64..10.0, 5),
        enc in prop::collection::vec(-10.0f64..10.0, 2..20),
        a in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
    ) {
        prop_assume!(naive_scale(&enc) > 1e-3);
        let base = mase(&pred, &target, &enc);
        let sc = |v: &[f64]| v.iter().map(|x| a * x).collect::<Vec<_>>();
        let scaled = mase(&sc(&pred), &sc(&target), &sc(&enc));
        prop_assert!((base - scaled).abs() <= 1e-10 * base.max(1.0));
    }

    #[test]
    fn rmse_dominates_mae(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..64)) {
        let (pred, target): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = point_metrics(&pred, &target).unwrap();
        prop_assert!(m.rmse >= m.mae * (1.0 - 1e-12));
    }

    #[test]
    fn rearranged_rows_are_sorted_and_stable(v in prop::collection::vec(-5.0f64..5.0, 7..70)) {
        let nq = 7;
        let v = &v[..v.len() / nq * nq];
        let once = monotonic_rearrange(v, nq);
        for row in once.chunks(nq) {
            prop_assert!(row.windows(2).all(|w| w[0] <= w[1]));
        }
        prop_assert_eq!(monotonic_rearrange(&once, nq), once);
    }
}
