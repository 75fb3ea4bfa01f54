//! Dataset config to window sets: ingest, resample, impute, split,
//! normalize, window.

use chrono::{DateTime, Duration, DurationRound, Utc};

use crate::config::{DataFormat, DatasetConfig};
use crate::data::{
    impute, ingest_events, ingest_wide, make_split_windows, resample, split_rows, Event,
    ImputeReport, NormStats, Reject, SeriesTable, Split, WindowSet,
};
use crate::error::{Error, Result};
use crate::report::dataset_digest;
use crate::synthetic::sewer_network;

#[derive(Debug, Clone)]
pub struct Ingest {
    /// Resampled table; gaps are NaN.
    pub table: SeriesTable,
    pub n_events: usize,
    pub rejects: Vec<Reject>,
}

/// Reads and resamples the configured inputs.
pub fn ingest(cfg: &DatasetConfig) -> Result<Ingest> {
    if cfg.format == DataFormat::Synthetic {
        let synth = cfg.synthetic.clone().unwrap_or_default();
        let table = sewer_network(&synth)?;
        return Ok(Ingest {
            n_events: table.len() * table.columns().len(),
            table,
            rejects: Vec::new(),
        });
    }
    let valid: Vec<String> = cfg.columns.keys().cloned().collect();
    let mut events: Vec<Event> = Vec::new();
    let mut rejects = Vec::new();
    for path in &cfg.paths {
        if !path.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("input file {} not found", path.display()),
            )));
        }
        let got = match cfg.format {
            DataFormat::Events => ingest_events(path, &valid)?,
            DataFormat::Wide => ingest_wide(path, &valid)?,
            DataFormat::Synthetic => unreachable!("handled above"),
        };
        events.extend(got.events);
        rejects.extend(got.rejects);
    }
    if events.is_empty() {
        return Err(Error::Empty("no valid events in the inputs"));
    }
    let step = Duration::seconds(cfg.step_seconds);
    let floor = |t: DateTime<Utc>| t.duration_trunc(step).map_err(|e| Error::Data(e.to_string()));
    let start = match cfg.start {
        Some(s) => s,
        None => floor(events.iter().map(|e| e.timestamp).min().expect("nonempty"))?,
    };
    let end = match cfg.end {
        Some(e) => e,
        None => floor(events.iter().map(|e| e.timestamp).max().expect("nonempty"))?,
    };
    let n_events = events.len();
    let table = resample(&events, start, end, step, &cfg.columns)?;
    Ok(Ingest {
        table,
        n_events,
        rejects,
    })
}

/// Everything downstream of ingestion.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset_digest: String,
    /// Imputed table in physical units.
    pub table: SeriesTable,
    pub impute_report: ImputeReport,
    pub raw_train: SeriesTable,
    pub raw_val: SeriesTable,
    pub split: Split,
    pub train: WindowSet,
    pub val: WindowSet,
}

impl Prepared {
    pub fn stats(&self) -> &NormStats {
        &self.split.stats
    }
}

pub fn prepare_table(resampled: &SeriesTable, cfg: &DatasetConfig) -> Result<Prepared> {
    let windows = cfg.windows();
    windows.validate()?;
    let (table, impute_report) = impute(resampled, cfg.impute)?;
    let (raw_train, raw_val) = split_rows(&table, cfg.split_fraction)?;
    let stats = NormStats::fit(&raw_train);
    let min_val = if cfg.allow_boundary_encoders {
        windows.horizon
    } else {
        windows.min_rows()
    };
    if raw_train.len() < windows.min_rows() || raw_val.len() < min_val {
        return Err(Error::TooShort {
            required: windows.min_rows(),
            actual: raw_train.len().min(raw_val.len()),
        });
    }
    let split = Split {
        train: stats.normalize(&raw_train)?,
        val: stats.normalize(&raw_val)?,
        stats,
    };
    let (train, val) = make_split_windows(&split.train, &split.val, &windows, cfg.allow_boundary_encoders)?;
    Ok(Prepared {
        dataset_digest: dataset_digest(resampled),
        table,
        impute_report,
        raw_train,
        raw_val,
        split,
        train,
        val,
    })
}

pub fn prepare(cfg: &DatasetConfig) -> Result<Prepared> {
    prepare_table(&ingest(cfg)?.table, cfg)
}
