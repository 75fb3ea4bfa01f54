use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::table::SeriesTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputePolicy {
    /// Hold the last observed value; cells before the first observation become 0.
    #[default]
    ForwardFillThenZero,
    /// Linear interpolation across interior gaps; edges hold the nearest value.
    LinearGapFill,
}

/// Number of imputed cells per column.
pub type ImputeReport = IndexMap<String, usize>;

pub fn forward_fill_then_zero(col: &mut [f64]) -> usize {
    let mut last = 0.0;
    let mut filled = 0;
    for v in col.iter_mut() {
        if v.is_nan() {
            *v = last;
            filled += 1;
        } else {
            last = *v;
        }
    }
    filled
}

pub fn linear_gap_fill(col: &mut [f64]) -> usize {
    let observed: Vec<usize> = (0..col.len()).filter(|&i| !col[i].is_nan()).collect();
    let (Some(&first), Some(&last)) = (observed.first(), observed.last()) else {
        return 0;
    };
    let mut filled = first;
    let head = col[first];
    col[..first].iter_mut().for_each(|v| *v = head);
    let tail = col[last];
    for v in &mut col[last + 1..] {
        *v = tail;
        filled += 1;
    }
    for pair in observed.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a < 2 {
            continue;
        }
        let (va, vb) = (col[a], col[b]);
        for i in a + 1..b {
            let t = (i - a) as f64 / (b - a) as f64;
            col[i] = va + (vb - va) * t;
            filled += 1;
        }
    }
    filled
}

/// Fills every NaN. A column with no observed value is an error.
pub fn impute(table: &SeriesTable, policy: ImputePolicy) -> Result<(SeriesTable, ImputeReport)> {
    let mut report = ImputeReport::new();
    let mut columns = IndexMap::new();
    for (name, col) in table.columns() {
        if !col.is_empty() && col.iter().all(|v| v.is_nan()) {
            return Err(Error::ColumnAllMissing(name.clone()));
        }
        let mut col = col.clone();
        let filled = match policy {
            ImputePolicy::ForwardFillThenZero => forward_fill_then_zero(&mut col),
            ImputePolicy::LinearGapFill => linear_gap_fill(&mut col),
        };
        report.insert(name.clone(), filled);
        columns.insert(name.clone(), col);
    }
    Ok((table.with_columns(columns), report))
}
