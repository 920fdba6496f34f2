//! Adaptive input normalization for multivariate time series.

pub mod adaptive;
pub mod cli;
pub mod data;
pub mod error;
pub mod flow_kl;
pub mod harness;
pub mod metrics;
pub mod neural;
pub mod power;
pub mod static_norm;
pub mod stats;
pub mod synthgen;

pub use data::{LabelKind, LabeledDataset, TimeSeriesBatch};
pub use error::{Error, Result};
