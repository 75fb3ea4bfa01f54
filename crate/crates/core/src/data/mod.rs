//! Event ingestion, regular resampling, gap filling, chronological
//! splitting with train-only normalization, and encoder/horizon windowing.

mod events;
mod impute;
mod split;
mod table;
mod windows;

pub use events::{
    ingest_events, ingest_wide, parse_timestamp, read_events, read_wide, resample,
    resample_hourly, Event, Ingested, Reject,
};
pub use impute::{forward_fill_then_zero, impute, linear_gap_fill, ImputePolicy, ImputeReport};
pub use split::{split_and_normalize, split_rows, ColumnStats, NormStats, Split};
pub use table::{ColumnMeta, ColumnRole, SeriesTable};
pub use windows::{
    make_split_windows, make_windows, time_features, WindowConfig, WindowSample, WindowSet,
    TIME_FEATURES,
};
