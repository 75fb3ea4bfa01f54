use std::io::Write;
use std::path::{Path, PathBuf};

use cso_forecast::config::{ModelSpec, RunConfig};
use cso_forecast::data::{ColumnStats, SeriesTable};
use cso_forecast::explain::explain;
use cso_forecast::models::{Forecaster, ModelKind};
use cso_forecast::pipeline::{ingest, prepare, Prepared};
use cso_forecast::report::{dataset_digest, evaluate};
use cso_forecast::robustness::{cluster_shutdown_eval, CorruptionMode, Scenario};
use cso_forecast::synthetic::{sewer_network, SynthConfig};
use cso_forecast::training::{random_search, TrialParams};
use serde::Serialize;
use serde_json::json;

use crate::workflow::{
    config_for_kind, fit_model, format_bench, load_model, meta_for, model_path, report_for,
    save_model, BenchRow, LoadError, ModelMeta,
};
use crate::{CliError, Command, Common, ModelSel, EXIT_CONFIG, EXIT_MISSING};

type AnyModel = cso_forecast::AnyModel;

fn load_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(dir) = &c.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = c.seed {
        cfg.train.seed = seed;
    }
    if let Some(e) = c.epochs {
        cfg.train.max_epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

type JsonMap = serde_json::Map<String, serde_json::Value>;

fn digests(config_digest: &str, dataset_digest: &str) -> JsonMap {
    let mut m = JsonMap::new();
    m.insert("config_digest".into(), config_digest.into());
    m.insert("dataset_digest".into(), dataset_digest.into());
    m
}

/// Adds the digests to `value`: merged in when it is an object, otherwise
/// next to it under `key`.
fn envelope<S: Serialize>(
    mut head: JsonMap,
    key: &str,
    value: &S,
) -> Result<serde_json::Value, CliError> {
    match serde_json::to_value(value)? {
        serde_json::Value::Object(fields) => head.extend(fields),
        other => {
            head.insert(key.into(), other);
        }
    }
    Ok(head.into())
}

fn load_selected(
    cfg: &RunConfig,
    sel: &ModelSel,
) -> Result<(AnyModel, ModelMeta, u64, PathBuf), CliError> {
    let kind = sel.model.unwrap_or(cfg.model.kind());
    let path = sel
        .model_path
        .clone()
        .unwrap_or_else(|| model_path(cfg, kind));
    match load_model(&path) {
        Ok((m, meta, size)) => {
            if m.kind() != kind && sel.model.is_some() {
                return Err(CliError::new(
                    EXIT_CONFIG,
                    format!(
                        "{} holds a {} model, not {}",
                        path.display(),
                        m.kind().name(),
                        kind.name()
                    ),
                ));
            }
            Ok((m, meta, size, path))
        }
        Err(LoadError::Missing(p)) => Err(CliError::new(
            EXIT_MISSING,
            format!(
                "model file {} not found; run `csofc train` first",
                p.display()
            ),
        )),
        Err(LoadError::Other(e)) => Err(e.into()),
    }
}

fn check_digest(meta: &ModelMeta, data: &Prepared) {
    if meta.dataset_digest != data.dataset_digest {
        eprintln!(
            "warning: model was trained on dataset {} but the config now yields {}",
            meta.dataset_digest, data.dataset_digest
        );
    }
}

pub(crate) fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Ingest { common } => cmd_ingest(&load_config(&common)?, out),
        Command::Train { common, model } => {
            let cfg = load_config(&common)?;
            let kind = model.unwrap_or(cfg.model.kind());
            cmd_train(&cfg, kind, out)
        }
        Command::Evaluate { common, sel } => cmd_evaluate(&load_config(&common)?, &sel, out),
        Command::Predict {
            common,
            sel,
            offsets,
        } => cmd_predict(&load_config(&common)?, &sel, &offsets, out),
        Command::Explain {
            common,
            sel,
            sample,
        } => cmd_explain(&load_config(&common)?, &sel, &sample, out),
        Command::Corrupt {
            common,
            sel,
            clusters,
            time_window,
        } => cmd_corrupt(&load_config(&common)?, &sel, &clusters, time_window, out),
        Command::Hpo {
            common,
            model,
            jobs,
            budget,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(b) = budget {
                cfg.hpo.budget = b;
            }
            let kind = model.unwrap_or(cfg.model.kind());
            cmd_hpo(&config_for_kind(&cfg, kind), jobs, out)
        }
        Command::Bench {
            common,
            models,
            retrain,
        } => cmd_bench(&load_config(&common)?, &models, retrain, out),
        Command::Synth {
            out: path,
            seed,
            hours,
            rain,
            config_out,
        } => cmd_synth(&path, seed, hours, rain, config_out.as_deref(), out),
    }
}

fn cmd_ingest(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let ing = ingest(&cfg.dataset)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let table_path = cfg.output_dir.join("table.csv");
    ing.table.write_csv(&table_path)?;
    let digest = dataset_digest(&ing.table);
    let missing: serde_json::Map<String, serde_json::Value> = ing
        .table
        .columns()
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().filter(|x| x.is_nan()).count().into()))
        .collect();
    let summary = json!({
        "config_digest": cfg.digest()?,
        "dataset_digest": digest,
        "rows": ing.table.len(),
        "columns": ing.table.columns().keys().collect::<Vec<_>>(),
        "start": ing.table.timestamps().first(),
        "end": ing.table.timestamps().last(),
        "step_seconds": ing.table.step().num_seconds(),
        "n_events": ing.n_events,
        "missing_cells": missing,
        "rejects": ing.rejects.iter().map(|r| json!({"line": r.line, "reason": r.reason})).collect::<Vec<_>>(),
    });
    write_json(&cfg.output_dir.join("table.json"), &summary)?;
    writeln!(
        out,
        "ingested {} rows x {} columns ({} events, {} rejected) -> {}  digest {digest}",
        ing.table.len(),
        ing.table.columns().len(),
        ing.n_events,
        ing.rejects.len(),
        table_path.display()
    )?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig, kind: ModelKind, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = config_for_kind(cfg, kind);
    let data = prepare(&cfg.dataset)?;
    let trained = fit_model(&cfg, &data)?;
    let meta = meta_for(&cfg, &data)?;
    let path = model_path(&cfg, kind);
    let size = save_model(&path, &trained.model, &meta)?;
    if let Some(log) = &trained.log {
        log.write_jsonl(
            &cfg.output_dir.join(format!("{}.log.jsonl", kind.name())),
            &digests(&meta.config_digest, &meta.dataset_digest),
        )?;
        writeln!(
            out,
            "trained {} for {} epochs (best epoch {}, val loss {:.6}{})",
            kind.name(),
            log.epochs.len(),
            log.best_epoch,
            log.best_val_loss,
            if log.stopped_early {
                ", stopped early"
            } else {
                ""
            }
        )?;
    }
    let report = report_for(&cfg, &data, &trained.model, &meta, size)?;
    write_json(
        &cfg.output_dir.join(format!("{}.report.json", kind.name())),
        &report,
    )?;
    writeln!(
        out,
        "{}: MAE {:.6} RMSE {:.6} size {} B latency {:.4} ms/sample -> {}",
        kind.name(),
        report.mae,
        report.rmse,
        report.size_bytes,
        report.latency_ms_per_sample,
        path.display()
    )?;
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, sel: &ModelSel, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, meta, size, _) = load_selected(cfg, sel)?;
    let data = prepare(&cfg.dataset)?;
    check_digest(&meta, &data);
    let report = report_for(cfg, &data, &model, &meta, size)?;
    let kind = model.kind();
    write_json(
        &cfg.output_dir.join(format!("{}.eval.json", kind.name())),
        &report,
    )?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn target_stats<'a>(meta: &'a ModelMeta, data: &Prepared) -> Result<&'a ColumnStats, CliError> {
    let target = data.split.train.target_name();
    meta.stats
        .get(target)
        .ok_or_else(|| CliError::new(1, format!("model metadata lacks stats for {target:?}")))
}

fn cmd_predict(
    cfg: &RunConfig,
    sel: &ModelSel,
    offsets: &[usize],
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let (model, meta, _, _) = load_selected(cfg, sel)?;
    let data = prepare(&cfg.dataset)?;
    check_digest(&meta, &data);
    let stats = target_stats(&meta, &data)?;
    if let Some(&bad) = offsets.iter().find(|&&i| i >= data.val.len()) {
        return Err(CliError::new(
            EXIT_CONFIG,
            format!(
                "offset {bad} out of range; {} validation windows",
                data.val.len()
            ),
        ));
    }
    let bundles = model.forecast(&data.val, offsets)?;
    let records: Vec<serde_json::Value> = bundles
        .iter()
        .zip(offsets)
        .map(|(b, &i)| {
            let s = &data.val.samples[i];
            let den = |v: &[f64]| v.iter().map(|&z| stats.denormalize(z)).collect::<Vec<_>>();
            let mut rec = json!({
                "offset": i,
                "t0": s.t0,
                "point": den(&b.point),
                "target": den(&s.target),
            });
            if let Some(q) = &b.quantiles {
                let nq = q.len() / data.val.horizon;
                rec["quantiles"] = json!(q.chunks(nq).map(den).collect::<Vec<_>>());
            }
            if let Some(bc) = &b.backcast {
                rec["backcast"] = json!(den(bc));
            }
            rec
        })
        .collect();
    let records = envelope(
        digests(&meta.config_digest, &meta.dataset_digest),
        "forecasts",
        &records,
    )?;
    let path = cfg
        .output_dir
        .join(format!("{}.predictions.json", model.kind().name()));
    write_json(&path, &records)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&records)?)?;
    Ok(())
}

fn cmd_explain(
    cfg: &RunConfig,
    sel: &ModelSel,
    samples: &[usize],
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let (model, meta, _, _) = load_selected(cfg, sel)?;
    let data = prepare(&cfg.dataset)?;
    check_digest(&meta, &data);
    let stats = target_stats(&meta, &data)?;
    let records = explain(&model, &data.val, samples, stats, cfg.evaluation.batch_size).map_err(
        |e| match e {
            cso_forecast::Error::Data(m) => CliError::new(EXIT_CONFIG, m),
            other => other.into(),
        },
    )?;
    let records = envelope(
        digests(&meta.config_digest, &meta.dataset_digest),
        "samples",
        &records,
    )?;
    let path = cfg
        .output_dir
        .join(format!("{}.explain.json", model.kind().name()));
    write_json(&path, &records)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&records)?)?;
    Ok(())
}

fn cmd_corrupt(
    cfg: &RunConfig,
    sel: &ModelSel,
    clusters: &[String],
    time_window: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let (model, meta, _, _) = load_selected(cfg, sel)?;
    let data = prepare(&cfg.dataset)?;
    check_digest(&meta, &data);
    let scenarios: Vec<Scenario> = if !clusters.is_empty() {
        clusters.iter().map(|c| Scenario::cluster(c)).collect()
    } else if !cfg.corrupt.scenarios.is_empty() {
        cfg.corrupt.scenarios.clone()
    } else {
        data.raw_val
            .clusters()
            .iter()
            .map(|c| Scenario::cluster(c))
            .collect()
    };
    let mut spec = cfg.corrupt.spec.clone();
    if time_window {
        spec.mode = CorruptionMode::TimeWindow;
    }
    let report = cluster_shutdown_eval(
        &model,
        &data.raw_val,
        &meta.stats,
        &cfg.dataset.windows(),
        &scenarios,
        &spec,
        cfg.evaluation.units,
        cfg.evaluation.batch_size,
    )?;
    let path = cfg
        .output_dir
        .join(format!("{}.degradation.json", model.kind().name()));
    write_json(
        &path,
        &envelope(
            digests(&meta.config_digest, &meta.dataset_digest),
            "report",
            &report,
        )?,
    )?;
    writeln!(
        out,
        "clean: MAE {:.6} RMSE {:.6}",
        report.clean.mae, report.clean.rmse
    )?;
    writeln!(
        out,
        "{:<16} {:>9} {:>12} {:>12} {:>10} {:>11}",
        "scenario", "sensors", "MAE", "RMSE", "MAE x", "RMSE x"
    )?;
    for s in &report.scenarios {
        writeln!(
            out,
            "{:<16} {:>9} {:>12.6} {:>12.6} {:>10.4} {:>11.4}",
            s.name,
            s.corrupted_sensors.len(),
            s.corrupted_mae,
            s.corrupted_rmse,
            s.mae_factor,
            s.rmse_factor
        )?;
    }
    Ok(())
}

fn apply_trial(base: &RunConfig, p: &TrialParams, seed: u64) -> RunConfig {
    let mut cfg = base.clone();
    cfg.train.learning_rate = p.learning_rate;
    cfg.train.weight_decay = p.weight_decay;
    cfg.train.dropout = p.dropout;
    cfg.train.gradient_clip = p.gradient_clip;
    cfg.train.max_epochs = base.hpo.max_epochs;
    cfg.train.seed = seed;
    match &mut cfg.model {
        ModelSpec::Nhits(s) => s.hidden_size = p.hidden_size,
        ModelSpec::TftLite(s) => {
            s.hidden_size = p.hidden_size;
            s.attention_heads = p.attention_heads;
        }
        ModelSpec::Baseline { .. } => {}
    }
    cfg
}

fn cmd_hpo(cfg: &RunConfig, jobs: usize, out: &mut dyn Write) -> Result<(), CliError> {
    if cfg.model.kind() == ModelKind::Baseline {
        return Err(CliError::new(
            EXIT_CONFIG,
            "model: the baseline has no hyperparameters to search",
        ));
    }
    let data = prepare(&cfg.dataset)?;
    let target = data.split.train.target_name().to_string();
    let stats = *data
        .split
        .stats
        .get(&target)
        .ok_or_else(|| CliError::new(1, "missing target stats"))?;
    let trials = random_search(
        &cfg.hpo.space,
        cfg.hpo.budget,
        cfg.hpo.seed,
        jobs,
        |p, seed| {
            let trial_cfg = apply_trial(cfg, p, seed);
            let trained = fit_model(&trial_cfg, &data)?;
            let m = evaluate(
                &trained.model,
                &data.val,
                &stats,
                cfg.evaluation.units,
                cfg.evaluation.batch_size,
            )?;
            Ok(m.mae)
        },
    )?;
    let head = digests(&cfg.digest()?, &data.dataset_digest);
    write_json(
        &cfg.output_dir.join("hpo_trials.json"),
        &envelope(head, "trials", &trials)?,
    )?;
    let best = &trials[0];
    let mut best_cfg = apply_trial(cfg, &best.params, best.seed);
    best_cfg.train.max_epochs = cfg.train.max_epochs;
    write_json(&cfg.output_dir.join("best_config.json"), &best_cfg)?;
    writeln!(
        out,
        "{:>5} {:>10} {:>10} {:>8} {:>8} {:>6} {:>5} {:>12}",
        "trial", "lr", "wd", "dropout", "clip", "hidden", "heads", "val MAE"
    )?;
    for t in &trials {
        let p = &t.params;
        let score = t.score.map_or("failed".to_string(), |s| format!("{s:.6}"));
        writeln!(
            out,
            "{:>5} {:>10.3e} {:>10.3e} {:>8.4} {:>8.4} {:>6} {:>5} {:>12}",
            t.index,
            p.learning_rate,
            p.weight_decay,
            p.dropout,
            p.gradient_clip,
            p.hidden_size,
            p.attention_heads,
            score
        )?;
    }
    Ok(())
}

fn cmd_bench(
    cfg: &RunConfig,
    kinds: &[ModelKind],
    retrain: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut rows = Vec::with_capacity(kinds.len());
    let mut data: Option<Prepared> = None;
    for &kind in kinds {
        let kcfg = config_for_kind(cfg, kind);
        let data = match &mut data {
            Some(d) => &*d,
            None => &*data.insert(prepare(&cfg.dataset)?),
        };
        let path = model_path(&kcfg, kind);
        let digest = kcfg.digest()?;
        let loaded = match load_model(&path) {
            Ok((m, meta, size))
                if !retrain
                    && meta.config_digest == digest
                    && meta.dataset_digest == data.dataset_digest =>
            {
                Some((m, meta, size))
            }
            Ok(_) | Err(LoadError::Missing(_)) => None,
            Err(LoadError::Other(e)) => return Err(e.into()),
        };
        let (model, meta, size) = match loaded {
            Some(x) => x,
            None => {
                let trained = fit_model(&kcfg, data)?;
                let meta = meta_for(&kcfg, data)?;
                let size = save_model(&path, &trained.model, &meta)?;
                (trained.model, meta, size)
            }
        };
        let report = report_for(&kcfg, data, &model, &meta, size)?;
        rows.push(BenchRow::from(&report));
    }
    let dataset = data
        .as_ref()
        .map_or(String::new(), |d| d.dataset_digest.clone());
    write_json(
        &cfg.output_dir.join("bench.json"),
        &envelope(digests(&cfg.digest()?, &dataset), "rows", &rows)?,
    )?;
    write!(out, "{}", format_bench(&rows))?;
    Ok(())
}

fn cmd_synth(
    path: &Path,
    seed: u64,
    hours: usize,
    rain: bool,
    config_out: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let synth = SynthConfig {
        seed,
        n_hours: hours,
        include_rain: rain,
        ..Default::default()
    };
    let table: SeriesTable = sewer_network(&synth)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    table.write_csv(path)?;
    writeln!(
        out,
        "wrote {} rows x {} sensors to {}",
        table.len(),
        table.columns().len(),
        path.display()
    )?;
    if let Some(cfg_path) = config_out {
        let cfg = json!({
            "dataset": {
                "format": "wide",
                "paths": [std::path::absolute(path)?],
                "columns": table.meta(),
                "encoder_len": 48,
                "horizon": 10,
                "split_fraction": 0.8
            },
            "model": {"kind": "nhits", "hidden_size": 128},
            "loss": {"kind": "mase"},
            "train": {
                "learning_rate": 1e-3,
                "dropout": 0.1,
                "weight_decay": 1e-4,
                "gradient_clip": 1.0,
                "max_epochs": 20
            },
            "output_dir": "runs"
        });
        RunConfig::from_json(&cfg.to_string())?.validate()?;
        write_json(cfg_path, &cfg)?;
        writeln!(out, "wrote config {}", cfg_path.display())?;
    }
    Ok(())
}
