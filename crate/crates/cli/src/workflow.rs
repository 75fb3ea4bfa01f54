//! Train, evaluate and benchmark steps shared by several subcommands.

use std::path::{Path, PathBuf};

use cso_forecast::config::{ModelSpec, RunConfig};
use cso_forecast::container;
use cso_forecast::data::NormStats;
use cso_forecast::metrics::measure_latency;
use cso_forecast::models::{Forecaster, ModelKind};
use cso_forecast::pipeline::Prepared;
use cso_forecast::report::{evaluate, EvalReport};
use cso_forecast::training::{train, TrainingLog, WindowFit};
use cso_forecast::{Error, Result};
use serde::{Deserialize, Serialize};

/// The run config with the model block switched to `kind` (default
/// architecture unless the config already describes that kind).
pub fn config_for_kind(cfg: &RunConfig, kind: ModelKind) -> RunConfig {
    let mut out = cfg.clone();
    if cfg.model.kind() != kind {
        out.model = ModelSpec::default_for(kind);
    }
    out
}

pub fn model_path(cfg: &RunConfig, kind: ModelKind) -> PathBuf {
    cfg.output_dir.join(format!("{}.model", kind.name()))
}

/// Metadata stored next to the parameters in every container.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config_digest: String,
    pub dataset_digest: String,
    pub loss: String,
    pub stats: NormStats,
    pub features: Vec<String>,
}

pub struct Trained {
    pub model: AnyModel,
    pub log: Option<TrainingLog>,
}

type AnyModel = cso_forecast::AnyModel;

pub fn fit_model(cfg: &RunConfig, data: &Prepared) -> Result<Trained> {
    let mc = cfg.model.build(&data.train, &cfg.loss, &cfg.train);
    let model = AnyModel::new(mc)?;
    let bs = cfg.train.batch_size;
    Ok(match model {
        AnyModel::Baseline(_) => Trained { model, log: None },
        AnyModel::Nhits(m) => {
            let mut fit = WindowFit::new(m, &data.train, &data.val, bs);
            let out = train(&mut fit, &cfg.train)?;
            Trained {
                model: AnyModel::Nhits(fit.model),
                log: Some(out.log),
            }
        }
        AnyModel::TftLite(m) => {
            let mut fit = WindowFit::new(m, &data.train, &data.val, bs);
            let out = train(&mut fit, &cfg.train)?;
            Trained {
                model: AnyModel::TftLite(fit.model),
                log: Some(out.log),
            }
        }
    })
}

pub fn meta_for(cfg: &RunConfig, data: &Prepared) -> Result<ModelMeta> {
    Ok(ModelMeta {
        config_digest: cfg.digest()?,
        dataset_digest: data.dataset_digest.clone(),
        loss: cfg.loss.name().to_string(),
        stats: data.split.stats.clone(),
        features: data.train.features.clone(),
    })
}

pub fn save_model(path: &Path, model: &AnyModel, meta: &ModelMeta) -> Result<u64> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    container::save(path, model, &serde_json::to_value(meta)?)
}

/// Missing model files surface as [`LoadError::Missing`] so callers can map
/// them to their own exit code.
pub enum LoadError {
    Missing(PathBuf),
    Other(Error),
}

impl From<Error> for LoadError {
    fn from(e: Error) -> Self {
        LoadError::Other(e)
    }
}

pub fn load_model(path: &Path) -> std::result::Result<(AnyModel, ModelMeta, u64), LoadError> {
    if !path.is_file() {
        return Err(LoadError::Missing(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(Error::from)?;
    let (model, meta) = container::from_bytes(&bytes)?;
    let meta: ModelMeta = serde_json::from_value(meta).map_err(Error::from)?;
    Ok((model, meta, bytes.len() as u64))
}

pub fn report_for(
    cfg: &RunConfig,
    data: &Prepared,
    model: &AnyModel,
    meta: &ModelMeta,
    size_bytes: u64,
) -> Result<EvalReport> {
    let target = data.split.train.target_name().to_string();
    let stats = meta
        .stats
        .get(&target)
        .ok_or_else(|| Error::Data(format!("no normalization stats for {target:?}")))?;
    let m = evaluate(
        model,
        &data.val,
        stats,
        cfg.evaluation.units,
        cfg.evaluation.batch_size,
    )?;
    let n = cfg.evaluation.latency_samples.min(data.val.len()).max(1);
    let latency = measure_latency(n, cfg.evaluation.latency_repeats, |i| {
        let _ = model.forecast(&data.val, &[i]);
    })?;
    let mut notes = serde_json::Map::new();
    notes.insert(
        "mase_denominator".into(),
        "per-sample encoder naive one-step error".into(),
    );
    notes.insert("model_config".into(), serde_json::to_value(model.config())?);
    notes.insert(
        "windows".into(),
        serde_json::to_value(cfg.dataset.windows())?,
    );
    notes.insert(
        "swa_start_fraction".into(),
        cfg.train.swa_start_fraction.into(),
    );
    notes.insert(
        "early_stop_patience".into(),
        cfg.train.early_stop_patience.into(),
    );
    Ok(EvalReport {
        model: model.kind(),
        loss: meta.loss.clone(),
        mae: m.mae,
        rmse: m.rmse,
        size_bytes,
        latency_ms_per_sample: latency.ms_per_sample,
        config_digest: meta.config_digest.clone(),
        dataset_digest: meta.dataset_digest.clone(),
        units: cfg.evaluation.units,
        n_samples: data.val.len(),
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: ModelKind,
    pub loss: String,
    pub mae: f64,
    pub rmse: f64,
    pub size_mb: f64,
    pub size_bytes: u64,
    pub latency_ms_per_sample: f64,
    pub config_digest: String,
}

impl From<&EvalReport> for BenchRow {
    fn from(r: &EvalReport) -> Self {
        Self {
            model: r.model,
            loss: r.loss.clone(),
            mae: r.mae,
            rmse: r.rmse,
            size_mb: r.size_bytes as f64 / 1e6,
            size_bytes: r.size_bytes,
            latency_ms_per_sample: r.latency_ms_per_sample,
            config_digest: r.config_digest.clone(),
        }
    }
}

pub fn format_bench(rows: &[BenchRow]) -> String {
    let mut s = format!(
        "{:<10} {:<9} {:>10} {:>10} {:>10} {:>18}\n",
        "model", "loss", "MAE", "RMSE", "Size[Mb]", "Latency[ms/sample]"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<10} {:<9} {:>10.4} {:>10.4} {:>10.4} {:>18.4}\n",
            r.model.name(),
            r.loss,
            r.mae,
            r.rmse,
            r.size_mb,
            r.latency_ms_per_sample
        ));
    }
    s
}
