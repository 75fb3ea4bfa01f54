use std::path::{Path, PathBuf};

use clap::Parser;
use cso_forecast_cli::{run, Cli, CliError, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC};
use serde_json::{json, Value};

fn write_config(dir: &Path, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "dataset": {
            "format": "synthetic",
            "synthetic": {"n_hours": 900, "seed": 5},
            "encoder_len": 24,
            "horizon": 6
        },
        "model": {"kind": "nhits", "hidden_size": 16},
        "train": {"max_epochs": 2, "batch_size": 64, "learning_rate": 0.003},
        "evaluation": {"latency_samples": 4, "latency_repeats": 3},
        "output_dir": "out"
    });
    merge(&mut cfg, extra);
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn merge(a: &mut Value, b: Value) {
    match (a, b) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(Value::Null), v);
            }
        }
        (a, b) => *a = b,
    }
}

fn csofc(args: &[&str]) -> Result<String, CliError> {
    let cli = Cli::try_parse_from(std::iter::once("csofc").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    run(cli, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_then_evaluate_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let c = cfg.to_str().unwrap();
    csofc(&["train", "-c", c]).unwrap();
    csofc(&["evaluate", "-c", c]).unwrap();
    let out = dir.path().join("out");
    let trained = read_json(&out.join("nhits.report.json"));
    let evaluated = read_json(&out.join("nhits.eval.json"));
    for key in [
        "mae",
        "rmse",
        "size_bytes",
        "n_samples",
        "config_digest",
        "dataset_digest",
    ] {
        assert_eq!(trained[key], evaluated[key], "{key}");
    }
    let size = std::fs::metadata(out.join("nhits.model")).unwrap().len();
    assert_eq!(trained["size_bytes"], json!(size));

    let log = std::fs::read_to_string(out.join("nhits.log.jsonl")).unwrap();
    let lines: Vec<Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["config_digest"], trained["config_digest"]);
    assert!(lines[1]["clip_events"].is_u64());
}

#[test]
fn rerun_reproduces_report_numbers() {
    let reports: Vec<Value> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let cfg = write_config(dir.path(), json!({}));
            csofc(&["train", "-c", cfg.to_str().unwrap()]).unwrap();
            read_json(&dir.path().join("out/nhits.report.json"))
        })
        .collect();
    for key in [
        "mae",
        "rmse",
        "size_bytes",
        "config_digest",
        "dataset_digest",
    ] {
        assert_eq!(reports[0][key], reports[1][key], "{key}");
    }
    let bits = |v: &Value| v.as_f64().unwrap().to_bits();
    assert_eq!(bits(&reports[0]["mae"]), bits(&reports[1]["mae"]));
}

#[test]
fn explain_exports_one_curve_per_stack() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let c = cfg.to_str().unwrap();
    csofc(&["train", "-c", c]).unwrap();
    csofc(&["explain", "-c", c, "--model", "nhits", "--sample", "0,3"]).unwrap();
    let doc = read_json(&dir.path().join("out/nhits.explain.json"));
    assert!(doc["config_digest"].is_string() && doc["dataset_digest"].is_string());
    let samples = doc["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 2);
    let s = &samples[0];
    assert_eq!(s["sample_index"], 0);
    assert_eq!(s["encoder"].as_array().unwrap().len(), 24);
    assert_eq!(s["target"].as_array().unwrap().len(), 6);
    let dec = s["decomposition"].as_array().unwrap();
    assert_eq!(dec.len(), 3);
    for (stack, pool) in dec.iter().zip([1, 4, 8]) {
        assert_eq!(stack["pooling_size"], pool);
        assert_eq!(stack["backcast"].as_array().unwrap().len(), 24);
        assert_eq!(stack["forecast"].as_array().unwrap().len(), 6);
        assert!(stack["label"].as_str().unwrap().contains(&pool.to_string()));
    }
}

#[test]
fn tft_explain_exports_attention() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        json!({"model": {"kind": "tft-lite", "hidden_size": 4, "attention_heads": 2}}),
    );
    let c = cfg.to_str().unwrap();
    csofc(&["train", "-c", c, "--epochs", "1"]).unwrap();
    csofc(&["explain", "-c", c, "--sample", "1"]).unwrap();
    let doc = read_json(&dir.path().join("out/tft-lite.explain.json"));
    let att = &doc["samples"][0]["attention"];
    let curve = att["curve"].as_array().unwrap();
    assert_eq!(curve.len(), 6);
    for row in curve {
        let s: f64 = row
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
    let imp = att["importances"].as_array().unwrap();
    let total: f64 = imp.iter().map(|i| i["percent"].as_f64().unwrap()).sum();
    assert!((total - 100.0).abs() < 1e-6);
}

#[test]
fn predict_and_corrupt_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let c = cfg.to_str().unwrap();
    csofc(&["train", "-c", c]).unwrap();
    csofc(&["predict", "-c", c, "--offsets", "0,2"]).unwrap();
    let pred = read_json(&dir.path().join("out/nhits.predictions.json"));
    assert_eq!(pred["forecasts"].as_array().unwrap().len(), 2);
    assert_eq!(pred["forecasts"][1]["offset"], 2);
    let table = csofc(&["corrupt", "-c", c]).unwrap();
    assert!(table.contains("upstream") && table.contains("remote"));
    let deg = read_json(&dir.path().join("out/nhits.degradation.json"));
    assert_eq!(deg["scenarios"].as_array().unwrap().len(), 2);
    assert!(deg["dataset_digest"].is_string());
}

#[test]
fn bench_reports_four_columns_for_every_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let table = csofc(&["bench", "-c", cfg.to_str().unwrap(), "--epochs", "1"]).unwrap();
    let header = table.lines().next().unwrap();
    for col in ["MAE", "RMSE", "Size[Mb]", "Latency[ms/sample]"] {
        assert!(header.contains(col), "{header}");
    }
    let doc = read_json(&dir.path().join("out/bench.json"));
    let rows = doc["rows"].as_array().unwrap();
    let kinds: Vec<&str> = rows.iter().map(|r| r["model"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["baseline", "nhits", "tft-lite"]);
    for r in rows {
        let kind = r["model"].as_str().unwrap();
        let size = std::fs::metadata(dir.path().join(format!("out/{kind}.model")))
            .unwrap()
            .len();
        assert_eq!(r["size_bytes"], json!(size));
        let lat = r["latency_ms_per_sample"].as_f64().unwrap();
        assert!(lat.is_finite() && lat > 0.0);
    }
}

#[test]
fn hpo_ranks_trials() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        json!({"hpo": {"budget": 3, "max_epochs": 1, "space": {"hidden_size": [8, 16]}}}),
    );
    csofc(&["hpo", "-c", cfg.to_str().unwrap(), "--jobs", "2"]).unwrap();
    let doc = read_json(&dir.path().join("out/hpo_trials.json"));
    let scores: Vec<f64> = doc["trials"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["score"].as_f64().unwrap())
        .collect();
    assert_eq!(scores.len(), 3);
    assert!(scores.windows(2).all(|w| w[0] <= w[1]));
    let best = read_json(&dir.path().join("out/best_config.json"));
    assert_eq!(best["model"]["kind"], "nhits");
}

#[test]
fn schema_violation_exits_two_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({"train": {"learning_rate": "fast"}}));
    let err = csofc(&["train", "-c", cfg.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.code, EXIT_CONFIG);
    assert!(
        err.message.contains("train.learning_rate"),
        "{}",
        err.message
    );

    let cfg = write_config(dir.path(), json!({"dataset": {"split_fraction": 1.5}}));
    let err = csofc(&["ingest", "-c", cfg.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.code, EXIT_CONFIG);
    assert!(
        err.message.contains("dataset.split_fraction"),
        "{}",
        err.message
    );
}

#[test]
fn missing_model_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let err = csofc(&["evaluate", "-c", cfg.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.code, EXIT_MISSING);
    let err = csofc(&[
        "explain",
        "-c",
        cfg.to_str().unwrap(),
        "--model",
        "tft-lite",
    ])
    .unwrap_err();
    assert_eq!(err.code, EXIT_MISSING);
}

#[test]
fn missing_input_file_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        json!({"dataset": {"format": "events", "paths": ["nope.csv"], "columns": {"tank": {"role": "target"}}}}),
    );
    let err = csofc(&["ingest", "-c", cfg.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.code, EXIT_MISSING, "{}", err.message);
}

#[test]
fn diverging_training_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        json!({"train": {"learning_rate": 1e300, "gradient_clip": 1e300}}),
    );
    let err = csofc(&["train", "-c", cfg.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.code, EXIT_NUMERIC, "{}", err.message);
}

#[test]
fn synth_writes_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("net.csv");
    let cfg = dir.path().join("cfg.json");
    csofc(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--hours",
        "600",
        "--config-out",
        cfg.to_str().unwrap(),
    ])
    .unwrap();
    let out = csofc(&["ingest", "-c", cfg.to_str().unwrap()]).unwrap();
    assert!(out.contains("600 rows"), "{out}");
}

#[test]
fn binary_exit_status_and_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_csofc"))
        .args(["evaluate", "-c", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_MISSING));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: model file"));

    let bad = write_config(dir.path(), json!({"model": {"kind": "lstm"}}));
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_csofc"))
        .args(["train", "-c", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model"));
}
