//! Estimating segmentation performance on unlabeled data.
//!
//! A reference segmenter conditioned on a model's own predictions is scored
//! on a labeled reference set; the resulting pseudo-metric is mapped to the
//! real metric through a least-squares fit collected over a checkpoint series.

pub mod calibration;
pub mod data;
mod distance;
pub mod error;
pub mod estimator;
pub mod meta_eval;
pub mod metrics;
pub mod seed;
pub mod segmenter;
pub mod synthetic;

pub use error::{Result, SpeError};
pub use metrics::MetricId;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
