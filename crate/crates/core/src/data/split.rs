use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::table::SeriesTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Per-column mean and population standard deviation of the training rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NormStats {
    pub columns: IndexMap<String, ColumnStats>,
}

impl NormStats {
    /// Constant columns get `std = 1`.
    pub fn fit(table: &SeriesTable) -> Self {
        let columns = table
            .columns()
            .iter()
            .map(|(name, col)| {
                let n = col.len().max(1) as f64;
                let mean = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                let std = if std > 0.0 && std.is_finite() { std } else { 1.0 };
                (name.clone(), ColumnStats { mean, std })
            })
            .collect();
        Self { columns }
    }

    pub fn get(&self, column: &str) -> Option<&ColumnStats> {
        self.columns.get(column)
    }

    pub fn normalize(&self, table: &SeriesTable) -> Result<SeriesTable> {
        let mut columns = IndexMap::new();
        for (name, col) in table.columns() {
            let s = self
                .get(name)
                .ok_or_else(|| Error::Data(format!("no normalization stats for {name:?}")))?;
            columns.insert(name.clone(), col.iter().map(|&v| s.normalize(v)).collect());
        }
        Ok(table.with_columns(columns))
    }
}

/// Chronological split at `floor(train_frac * n)`.
pub fn split_rows(table: &SeriesTable, train_frac: f64) -> Result<(SeriesTable, SeriesTable)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_frac}"
        )));
    }
    let n = table.len();
    let cut = (train_frac * n as f64).floor() as usize;
    Ok((table.rows(0, cut), table.rows(cut, n)))
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: SeriesTable,
    pub val: SeriesTable,
    pub stats: NormStats,
}

/// Splits chronologically, fits [`NormStats`] on the training rows only and
/// normalizes both partitions with them. Each partition must hold at least
/// `min_rows` rows (encoder length plus horizon).
pub fn split_and_normalize(table: &SeriesTable, train_frac: f64, min_rows: usize) -> Result<Split> {
    let (train, val) = split_rows(table, train_frac)?;
    for part in [&train, &val] {
        if part.len() < min_rows {
            return Err(Error::TooShort {
                required: min_rows,
                actual: part.len(),
            });
        }
    }
    let stats = NormStats::fit(&train);
    Ok(Split {
        train: stats.normalize(&train)?,
        val: stats.normalize(&val)?,
        stats,
    })
}
