//! Explainable knowledge distillation.
//!
//! Focal-BCE and tempered distillation objectives with analytic gradients,
//! a two-phase teacher → student training engine, Score-CAM saliency with
//! teacher/student alignment scores, dataset ingestion, and evaluation
//! metrics.

pub mod data;
pub mod engine;
pub mod error;
pub mod explain;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod run;

pub use error::{Error, Result};
