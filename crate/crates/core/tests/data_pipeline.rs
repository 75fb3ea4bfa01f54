mod common;

use chrono::{DateTime, Duration, TimeZone, Utc};
use cso_forecast::data::{
    make_split_windows, make_windows, read_events, resample_hourly, split_and_normalize, split_rows, ColumnMeta,
    ColumnRole, Event, NormStats, SeriesTable, WindowConfig,
};
use cso_forecast::Error;
use indexmap::IndexMap;
use proptest::prelude::*;
use rand::Rng;

use common::rng;

fn t(h: i64) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap() + Duration::hours(h)
}

fn meta() -> IndexMap<String, ColumnMeta> {
    let mut m = IndexMap::new();
    m.insert("tank".to_string(), ColumnMeta::new(ColumnRole::Target));
    m.insert("s1".to_string(), ColumnMeta::in_cluster(ColumnRole::Exogenous, "a"));
    m
}

fn table(n: usize, seed: u64) -> SeriesTable {
    let mut r = rng(seed);
    let mut cols = IndexMap::new();
    cols.insert("tank".to_string(), (0..n).map(|_| r.gen_range(0.0..5.0)).collect());
    cols.insert("s1".to_string(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect());
    SeriesTable::new((0..n as i64).map(t).collect(), Duration::hours(1), cols, meta()).unwrap()
}

#[test]
fn year_2021_hourly_grid_has_8760_rows() {
    let events = vec![
        Event {
            timestamp: t(0),
            sensor: "tank".into(),
            value: 1.0,
        },
        Event {
            timestamp: t(8759),
            sensor: "s1".into(),
            value: 2.0,
        },
    ];
    let end = Utc.with_ymd_and_hms(2021, 12, 31, 23, 0, 0).unwrap();
    let tab = resample_hourly(&events, t(0), end, &meta()).unwrap();
    assert_eq!(tab.len(), 8760);
    let (train, val) = split_rows(&tab, 0.8).unwrap();
    assert_eq!((train.len(), val.len()), (7008, 1752));
}

fn brute_force_count(n: usize, l: usize, h: usize, stride: usize) -> usize {
    (0..n).filter(|o| o % stride == 0 && o + l + h <= n).count()
}

#[test]
fn window_count_matches_enumeration() {
    let mut r = rng(2024);
    for _ in 0..200 {
        let n = r.gen_range(1..400);
        let cfg = WindowConfig {
            encoder_len: r.gen_range(1..60),
            horizon: r.gen_range(1..24),
            stride: r.gen_range(1..12),
        };
        let expected = brute_force_count(n, cfg.encoder_len, cfg.horizon, cfg.stride);
        assert_eq!(cfg.count(n), expected, "{cfg:?} n={n}");
        match make_windows(&table(n, 1), &cfg) {
            Ok(set) => {
                assert_eq!(set.len(), expected);
                for (i, s) in set.samples.iter().enumerate() {
                    assert_eq!(s.offset, i * cfg.stride);
                }
            }
            Err(Error::TooShort { .. }) => assert_eq!(expected, 0),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn window_contents_line_up_with_rows() {
    let tab = table(60, 4);
    let cfg = WindowConfig {
        encoder_len: 7,
        horizon: 3,
        stride: 2,
    };
    let set = make_windows(&tab, &cfg).unwrap();
    let tank = tab.column("tank").unwrap();
    let s1 = tab.column("s1").unwrap();
    for s in &set.samples {
        assert_eq!(s.target, tank[s.offset + 7..s.offset + 10]);
        assert_eq!(set.encoder_target(s), tank[s.offset..s.offset + 7]);
        assert_eq!(s.encoder_column(2, 1), s1[s.offset..s.offset + 7]);
        assert_eq!(s.t0, tab.timestamps()[s.offset + 7]);
    }
}

#[test]
fn validation_targets_never_touch_training_rows() {
    let tab = table(500, 8);
    let split = split_and_normalize(&tab, 0.8, 58).unwrap();
    let cut = *split.val.timestamps().first().unwrap();
    let cfg = WindowConfig {
        encoder_len: 48,
        horizon: 10,
        stride: 1,
    };
    for allow in [false, true] {
        let (_, val) = make_split_windows(&split.train, &split.val, &cfg, allow).unwrap();
        for s in &val.samples {
            assert!(s.t0 >= cut);
        }
        let first_encoder_start = val.samples[0].t0 - Duration::hours(48);
        if allow {
            assert_eq!(first_encoder_start, cut - Duration::hours(48));
            assert_eq!(val.len(), split.val.len() - 10 + 1);
        } else {
            assert_eq!(first_encoder_start, cut);
            assert_eq!(val.len(), cfg.count(split.val.len()));
        }
    }
}

#[test]
fn normalization_uses_training_rows_only() {
    let mut tab = table(100, 9);
    tab.column_mut("tank").unwrap()[95] = 1e6;
    let split = split_and_normalize(&tab, 0.8, 10).unwrap();
    let fitted = NormStats::fit(&split_rows(&tab, 0.8).unwrap().0);
    assert_eq!(split.stats, fitted);
    assert!(split.stats.get("tank").unwrap().mean < 10.0);
}

proptest! {
    #[test]
    fn normalize_round_trip(values in prop::collection::vec(-1e4f64..1e4, 3..80)) {
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let n = values.len();
        let mut cols = IndexMap::new();
        cols.insert("tank".to_string(), values.clone());
        cols.insert("s1".to_string(), values.iter().map(|v| v * 0.5 + 1.0).collect());
        let tab = SeriesTable::new((0..n as i64).map(t).collect(), Duration::hours(1), cols, meta()).unwrap();
        let stats = NormStats::fit(&tab);
        let normed = stats.normalize(&tab).unwrap();
        for name in ["tank", "s1"] {
            let st = stats.get(name).unwrap();
            for (&x, &z) in tab.column(name).unwrap().iter().zip(normed.column(name).unwrap()) {
                let back = st.denormalize(z);
                prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0), "{} vs {}", back, x);
            }
        }
    }

    #[test]
    fn resample_ignores_event_order(
        raw in prop::collection::vec((0i64..72 * 60, 0usize..2, -50.0f64..50.0), 1..120),
        seed in any::<u64>(),
    ) {
        let names = ["tank", "s1"];
        let lines: Vec<String> = raw
            .iter()
            .map(|(m, s, v)| format!("{},{},{}", (t(0) + Duration::minutes(*m)).to_rfc3339(), names[*s], v))
            .collect();
        let parse = |lines: &[String]| {
            let text = format!("timestamp,sensor,value\n{}\n", lines.join("\n"));
            let valid: Vec<String> = names.iter().map(|s| s.to_string()).collect();
            read_events(text.as_bytes(), &valid).unwrap().events
        };
        let a = resample_hourly(&parse(&lines), t(0), t(72), &meta()).unwrap();
        let mut shuffled = lines.clone();
        let mut r = rng(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, r.gen_range(0..=i));
        }
        let b = resample_hourly(&parse(&shuffled), t(0), t(72), &meta()).unwrap();
        prop_assert_eq!(a.canonical_bytes(), b.canonical_bytes());
    }
}
