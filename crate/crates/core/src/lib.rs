//! Interpretable wastewater forecasting: data ingestion and windowing, an
//! N-HiTS forecaster with additive stack explanations, a reduced temporal
//! fusion transformer with attention-based importances, training, sensor
//! failure simulation and benchmarking.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the data pipeline and the
//! CLI use.

pub mod autodiff;
pub mod config;
pub mod container;
pub mod data;
pub mod error;
pub mod explain;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod report;
pub mod robustness;
pub mod scalar;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type ParamStore = autodiff::ParamStore<f64>;
pub type Batch = models::Batch<f64>;
pub type ForecastBundle = models::ForecastBundle<f64>;
pub type NHits = models::nhits::NHits<f64>;
pub type TftLite = models::tft::TftLite<f64>;
pub type AnyModel = models::AnyModel<f64>;
