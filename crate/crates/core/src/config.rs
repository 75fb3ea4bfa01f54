//! Run configuration shared by every CLI subcommand.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnMeta, ImputePolicy, WindowConfig, WindowSet};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::models::baseline::BaselineConfig;
use crate::models::nhits::NHitsConfig;
use crate::models::tft::TftConfig;
use crate::models::{ModelConfig, ModelKind};
use crate::report::MetricUnits;
use crate::robustness::CorruptionSpec;
use crate::synthetic::SynthConfig;
use crate::training::{HpoSpace, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Long format: `timestamp,sensor,value` rows.
    Events,
    /// One timestamp column followed by one column per sensor.
    Wide,
    /// Generated in memory from `dataset.synthetic`.
    Synthetic,
}

fn default_step() -> i64 {
    3600
}
fn default_encoder() -> usize {
    48
}
fn default_horizon() -> usize {
    10
}
fn default_one() -> usize {
    1
}
fn default_split() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub format: DataFormat,
    /// Input files; relative paths resolve against the config file.
    #[serde(default)]
    pub paths: Vec<PathBuf>,
    /// Sensor roles and clusters; required for file formats.
    #[serde(default)]
    pub columns: IndexMap<String, ColumnMeta>,
    #[serde(default = "default_step")]
    pub step_seconds: i64,
    /// Inclusive grid bounds; default to the span of the data.
    #[serde(default)]
    pub start: Option<DateTime<Utc>>,
    #[serde(default)]
    pub end: Option<DateTime<Utc>>,
    #[serde(default = "default_encoder")]
    pub encoder_len: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default = "default_split")]
    pub split_fraction: f64,
    #[serde(default)]
    pub impute: ImputePolicy,
    /// Let validation encoders reach back into the training rows.
    #[serde(default)]
    pub allow_boundary_encoders: bool,
    #[serde(default)]
    pub synthetic: Option<SynthConfig>,
}

impl DatasetConfig {
    pub fn windows(&self) -> WindowConfig {
        WindowConfig {
            encoder_len: self.encoder_len,
            horizon: self.horizon,
            stride: self.stride,
        }
    }
}

fn default_fit_points() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NhitsSpec {
    #[serde(default = "NhitsSpec::n_stacks")]
    pub n_stacks: usize,
    #[serde(default = "default_one")]
    pub blocks_per_stack: usize,
    #[serde(default = "NhitsSpec::pooling")]
    pub pooling_sizes: Vec<usize>,
    #[serde(default = "NhitsSpec::ratios")]
    pub downsample_ratios: Vec<usize>,
    #[serde(default = "NhitsSpec::hidden")]
    pub hidden_size: usize,
    #[serde(default = "NhitsSpec::layers")]
    pub n_hidden_layers: usize,
    #[serde(default = "NhitsSpec::ratio")]
    pub backcast_loss_ratio: f64,
}

impl NhitsSpec {
    fn n_stacks() -> usize {
        3
    }
    fn pooling() -> Vec<usize> {
        vec![1, 4, 8]
    }
    fn ratios() -> Vec<usize> {
        vec![1, 2, 4]
    }
    fn hidden() -> usize {
        512
    }
    fn layers() -> usize {
        2
    }
    fn ratio() -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TftSpec {
    #[serde(default = "TftSpec::hidden")]
    pub hidden_size: usize,
    #[serde(default = "TftSpec::heads")]
    pub attention_heads: usize,
}

impl TftSpec {
    fn hidden() -> usize {
        4
    }
    fn heads() -> usize {
        3
    }
}

/// Architecture block; shapes that depend on the data are filled in by
/// [`ModelSpec::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Baseline {
        #[serde(default = "default_fit_points")]
        fit_points: usize,
    },
    Nhits(NhitsSpec),
    TftLite(TftSpec),
}

impl ModelSpec {
    /// Default architecture for `kind`.
    pub fn default_for(kind: ModelKind) -> Self {
        let empty = serde_json::json!({ "kind": kind.name() });
        serde_json::from_value(empty).expect("every field has a default")
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Baseline { .. } => ModelKind::Baseline,
            ModelSpec::Nhits(_) => ModelKind::Nhits,
            ModelSpec::TftLite(_) => ModelKind::TftLite,
        }
    }

    pub fn build(&self, windows: &WindowSet, loss: &LossKind, train: &TrainConfig) -> ModelConfig {
        let (l, h) = (windows.encoder_len, windows.horizon);
        let quantiles = loss.quantiles().cloned();
        match self {
            ModelSpec::Baseline { fit_points } => ModelConfig::Baseline(BaselineConfig {
                fit_points: *fit_points,
            }),
            ModelSpec::Nhits(s) => {
                let mut c = NHitsConfig::new(l, h, windows.n_features() - 1);
                c.n_stacks = s.n_stacks;
                c.blocks_per_stack = s.blocks_per_stack;
                c.pooling_sizes = s.pooling_sizes.clone();
                c.downsample_ratios = s.downsample_ratios.clone();
                c.hidden_size = s.hidden_size;
                c.n_hidden_layers = s.n_hidden_layers;
                c.backcast_loss_ratio = s.backcast_loss_ratio;
                c.dropout = train.dropout;
                c.output_quantiles = quantiles;
                c.seed = train.seed;
                ModelConfig::Nhits(c)
            }
            ModelSpec::TftLite(s) => {
                let mut c = TftConfig::new(l, h, windows.features.clone());
                c.hidden_size = s.hidden_size;
                c.attention_heads = s.attention_heads;
                c.dropout = train.dropout;
                c.output_quantiles = quantiles;
                c.seed = train.seed;
                ModelConfig::TftLite(c)
            }
        }
    }
}

fn default_repeats() -> usize {
    5
}
fn default_latency_samples() -> usize {
    32
}
fn default_eval_batch() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub units: MetricUnits,
    #[serde(default = "default_repeats")]
    pub latency_repeats: usize,
    #[serde(default = "default_latency_samples")]
    pub latency_samples: usize,
    #[serde(default = "default_eval_batch")]
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            units: MetricUnits::Physical,
            latency_repeats: default_repeats(),
            latency_samples: default_latency_samples(),
            batch_size: default_eval_batch(),
        }
    }
}

fn default_budget() -> usize {
    10
}
fn default_hpo_epochs() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpoConfig {
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    /// Epoch cap per trial.
    #[serde(default = "default_hpo_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub space: HpoSpace,
}

impl Default for HpoConfig {
    fn default() -> Self {
        Self {
            budget: default_budget(),
            seed: 0,
            max_epochs: default_hpo_epochs(),
            space: HpoSpace::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct CorruptConfig {
    /// Scenario per entry; each names sensors or cluster labels.
    /// Empty means one scenario per cluster.
    #[serde(default)]
    pub scenarios: Vec<crate::robustness::Scenario>,
    #[serde(default)]
    pub spec: CorruptionSpec,
}


fn default_loss() -> LossKind {
    LossKind::Mase
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
    #[serde(default)]
    pub hpo: HpoConfig,
    #[serde(default)]
    pub corrupt: CorruptConfig,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Parses and validates; errors carry the JSON path of the bad field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut cfg.dataset.paths {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        let bad = |path: &str, msg: String| Err(Error::Config(format!("{path}: {msg}")));
        if d.format != DataFormat::Synthetic {
            if d.paths.is_empty() {
                return bad("dataset.paths", "at least one input file is required".into());
            }
            if d.columns.is_empty() {
                return bad("dataset.columns", "sensor metadata is required".into());
            }
        }
        if d.step_seconds <= 0 {
            return bad("dataset.step_seconds", "must be positive".into());
        }
        if !(d.split_fraction > 0.0 && d.split_fraction < 1.0) {
            return bad("dataset.split_fraction", format!("must lie in (0, 1), got {}", d.split_fraction));
        }
        if let Err(e) = d.windows().validate() {
            return bad("dataset", e.to_string());
        }
        if let Err(e) = self.train.validate() {
            return bad("train", e.to_string());
        }
        if self.evaluation.latency_repeats < 3 {
            return bad("evaluation.latency_repeats", "must be >= 3".into());
        }
        if let LossKind::Quantile { quantiles } = &self.loss {
            if quantiles.median_index().is_none() {
                return bad("loss.quantiles", "must contain 0.5".into());
            }
        }
        if let Err(e) = self.corrupt.spec.validate() {
            return bad("corrupt.spec", e.to_string());
        }
        if let Err(e) = self.hpo.space.validate() {
            return bad("hpo.space", e.to_string());
        }
        Ok(())
    }

    /// Digest of the canonical JSON form, without `output_dir` (where a run
    /// writes does not change what it computes).
    pub fn digest(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        crate::report::config_digest(&v)
    }
}
