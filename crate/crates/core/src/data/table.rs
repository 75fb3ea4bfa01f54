use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Target,
    Exogenous,
    Rain,
    TimeIndex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub role: ColumnRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<String>,
}

impl ColumnMeta {
    pub fn new(role: ColumnRole) -> Self {
        Self {
            role,
            cluster: None,
        }
    }

    pub fn in_cluster(role: ColumnRole, cluster: impl Into<String>) -> Self {
        Self {
            role,
            cluster: Some(cluster.into()),
        }
    }
}

/// Regularly sampled multi-sensor table. Missing cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    timestamps: Vec<DateTime<Utc>>,
    step: Duration,
    columns: IndexMap<String, Vec<f64>>,
    meta: IndexMap<String, ColumnMeta>,
}

impl SeriesTable {
    pub fn new(
        timestamps: Vec<DateTime<Utc>>,
        step: Duration,
        columns: IndexMap<String, Vec<f64>>,
        meta: IndexMap<String, ColumnMeta>,
    ) -> Result<Self> {
        if step <= Duration::zero() {
            return Err(Error::Data(format!("non-positive step {step}")));
        }
        for pair in timestamps.windows(2) {
            if pair[1] - pair[0] != step {
                return Err(Error::Data(format!(
                    "timestamps {} -> {} are not {}s apart",
                    pair[0],
                    pair[1],
                    step.num_seconds()
                )));
            }
        }
        for (name, col) in &columns {
            if col.len() != timestamps.len() {
                return Err(Error::Data(format!(
                    "column {name:?} has {} rows, expected {}",
                    col.len(),
                    timestamps.len()
                )));
            }
            if !meta.contains_key(name) {
                return Err(Error::Data(format!("column {name:?} has no metadata")));
            }
        }
        let targets = meta
            .iter()
            .filter(|(n, m)| m.role == ColumnRole::Target && columns.contains_key(*n))
            .count();
        if targets != 1 {
            return Err(Error::Data(format!(
                "expected exactly one target column, found {targets}"
            )));
        }
        let meta = columns
            .keys()
            .map(|k| (k.clone(), meta[k].clone()))
            .collect();
        Ok(Self {
            timestamps,
            step,
            columns,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn step(&self) -> Duration {
        self.step
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn columns(&self) -> &IndexMap<String, Vec<f64>> {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        self.columns.get_mut(name)
    }

    pub fn meta(&self) -> &IndexMap<String, ColumnMeta> {
        &self.meta
    }

    pub fn target_name(&self) -> &str {
        self.meta
            .iter()
            .find(|(_, m)| m.role == ColumnRole::Target)
            .map(|(n, _)| n.as_str())
            .expect("validated on construction")
    }

    pub fn target(&self) -> &[f64] {
        &self.columns[self.target_name()]
    }

    /// Non-target observed columns (exogenous and rain), in table order.
    pub fn covariate_names(&self) -> Vec<&str> {
        self.meta
            .iter()
            .filter(|(_, m)| matches!(m.role, ColumnRole::Exogenous | ColumnRole::Rain))
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn clusters(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for m in self.meta.values() {
            if let Some(c) = &m.cluster {
                if !out.contains(c) {
                    out.push(c.clone());
                }
            }
        }
        out
    }

    pub fn cluster_members(&self, cluster: &str) -> Vec<&str> {
        self.meta
            .iter()
            .filter(|(_, m)| m.cluster.as_deref() == Some(cluster))
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn rows(&self, start: usize, end: usize) -> SeriesTable {
        SeriesTable {
            timestamps: self.timestamps[start..end].to_vec(),
            step: self.step,
            columns: self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), v[start..end].to_vec()))
                .collect(),
            meta: self.meta.clone(),
        }
    }

    pub(crate) fn with_columns(&self, columns: IndexMap<String, Vec<f64>>) -> SeriesTable {
        SeriesTable {
            timestamps: self.timestamps.clone(),
            step: self.step,
            columns,
            meta: self.meta.clone(),
        }
    }

    /// Canonical byte encoding: timestamps (i64 LE seconds), then for each
    /// column its name, a zero byte and its values (f64 LE bits).
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * self.len() * (1 + self.columns.len()));
        for t in &self.timestamps {
            out.extend_from_slice(&t.timestamp().to_le_bytes());
        }
        for (name, col) in &self.columns {
            out.extend_from_slice(name.as_bytes());
            out.push(0);
            for v in col {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    /// Writes a wide CSV: `timestamp,<col>,<col>...`, NaN as empty cells.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.columns.keys().cloned());
        w.write_record(&header)?;
        for (i, t) in self.timestamps.iter().enumerate() {
            let mut rec = vec![t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)];
            for col in self.columns.values() {
                let v = col[i];
                rec.push(if v.is_nan() { String::new() } else { v.to_string() });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
