use std::io::Read;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use indexmap::IndexMap;

use super::table::{ColumnMeta, SeriesTable};
use crate::error::{Error, Result};

/// One sensor reading. Sensors log only when their value changes.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub timestamp: DateTime<Utc>,
    pub sensor: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    /// 1-based line number in the source file (the header is line 1).
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub events: Vec<Event>,
    pub rejects: Vec<Reject>,
}

/// Accepts RFC 3339 or a naive `YYYY-MM-DD[T ]HH:MM[:SS]` read as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|n| n.and_utc())
}

fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.sensor.cmp(&b.sensor))
            .then_with(|| a.value.total_cmp(&b.value))
    });
}

fn check_sensor(id: &str, line: usize, valid: &[String]) -> Result<()> {
    if valid.is_empty() || valid.iter().any(|v| v == id) {
        Ok(())
    } else {
        Err(Error::UnknownSensor {
            id: id.to_string(),
            line,
            valid: valid.to_vec(),
        })
    }
}

/// Long format: header row then `timestamp,sensor,value` rows.
///
/// An empty `valid_sensors` accepts any id.
pub fn read_events<R: Read>(reader: R, valid_sensors: &[String]) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Ingested::default();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(Reject {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if rec.len() < 3 {
            out.rejects.push(Reject {
                line,
                reason: format!("expected 3 fields, got {}", rec.len()),
            });
            continue;
        }
        let Some(ts) = parse_timestamp(&rec[0]) else {
            out.rejects.push(Reject {
                line,
                reason: format!("unparseable timestamp {:?}", &rec[0]),
            });
            continue;
        };
        let sensor = rec[1].to_string();
        check_sensor(&sensor, line, valid_sensors)?;
        match rec[2].parse::<f64>() {
            Ok(v) if v.is_finite() => out.events.push(Event {
                timestamp: ts,
                sensor,
                value: v,
            }),
            _ => out.rejects.push(Reject {
                line,
                reason: format!("unparseable value {:?}", &rec[2]),
            }),
        }
    }
    sort_events(&mut out.events);
    Ok(out)
}

/// Wide format: `timestamp,<sensor>,<sensor>...`; empty cells are skipped.
pub fn read_wide<R: Read>(reader: R, valid_sensors: &[String]) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    for h in headers.iter().skip(1) {
        check_sensor(h, 1, valid_sensors)?;
    }
    let mut out = Ingested::default();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(Reject {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let Some(ts) = rec.get(0).and_then(parse_timestamp) else {
            out.rejects.push(Reject {
                line,
                reason: format!("unparseable timestamp {:?}", rec.get(0).unwrap_or("")),
            });
            continue;
        };
        let mut row = Vec::new();
        let mut bad = None;
        for (cell, name) in rec.iter().skip(1).zip(headers.iter().skip(1)) {
            if cell.is_empty() {
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(Event {
                    timestamp: ts,
                    sensor: name.clone(),
                    value: v,
                }),
                _ => {
                    bad = Some(format!("unparseable value {cell:?} for {name:?}"));
                    break;
                }
            }
        }
        match bad {
            Some(reason) => out.rejects.push(Reject { line, reason }),
            None => out.events.extend(row),
        }
    }
    sort_events(&mut out.events);
    Ok(out)
}

pub fn ingest_events(path: &Path, valid_sensors: &[String]) -> Result<Ingested> {
    read_events(std::fs::File::open(path)?, valid_sensors)
}

pub fn ingest_wide(path: &Path, valid_sensors: &[String]) -> Result<Ingested> {
    read_wide(std::fs::File::open(path)?, valid_sensors)
}

/// Averages events into buckets `[t, t + step)` for every grid point `t` in
/// `start..=end`. Buckets without events are NaN. Columns follow `meta`
/// order; events from sensors not in `meta` are ignored.
pub fn resample(
    events: &[Event],
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    step: Duration,
    meta: &IndexMap<String, ColumnMeta>,
) -> Result<SeriesTable> {
    if start >= end {
        return Err(Error::Data(format!("resample: start {start} is not before end {end}")));
    }
    let step_s = step.num_seconds();
    if step_s <= 0 {
        return Err(Error::Data(format!("resample: non-positive step {step}")));
    }
    if (start.timestamp() % step_s) != 0 || (end.timestamp() % step_s) != 0 {
        return Err(Error::Data(format!(
            "resample: {start} and {end} must lie on {step_s}s boundaries"
        )));
    }
    let n = ((end - start).num_seconds() / step_s) as usize + 1;
    let timestamps: Vec<_> = (0..n).map(|i| start + step * i as i32).collect();

    // Sum in a canonical order so the result is independent of input order.
    let mut sorted: Vec<&Event> = events.iter().collect();
    sorted.sort_by(|a, b| {
        a.sensor
            .cmp(&b.sensor)
            .then_with(|| a.timestamp.cmp(&b.timestamp))
            .then_with(|| a.value.total_cmp(&b.value))
    });

    let mut sums: IndexMap<String, (Vec<f64>, Vec<u32>)> = meta
        .keys()
        .map(|k| (k.clone(), (vec![0.0; n], vec![0; n])))
        .collect();
    for e in sorted {
        let Some((sum, count)) = sums.get_mut(&e.sensor) else {
            continue;
        };
        let offset = (e.timestamp - start).num_seconds();
        if offset < 0 {
            continue;
        }
        let idx = (offset / step_s) as usize;
        if idx >= n {
            continue;
        }
        sum[idx] += e.value;
        count[idx] += 1;
    }
    let columns = sums
        .into_iter()
        .map(|(k, (sum, count))| {
            let col = sum
                .iter()
                .zip(&count)
                .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
                .collect();
            (k, col)
        })
        .collect();
    SeriesTable::new(timestamps, step, columns, meta.clone())
}

/// Hourly grid over `[start, end]`.
pub fn resample_hourly(
    events: &[Event],
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    meta: &IndexMap<String, ColumnMeta>,
) -> Result<SeriesTable> {
    resample(events, start, end, Duration::hours(1), meta)
}
