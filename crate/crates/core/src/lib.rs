//! Epistemic-uncertainty-aware conformal prediction.
//!
//! Any nonconformity score `s(x, y)` can be passed through a Bayesian predictive
//! CDF fit on part of the calibration data, `s'(x, y) = F(s(x, y) | x, D)`, and
//! then calibrated with ordinary split conformal on the rest. Regions widen
//! where the predictive model is uncertain while keeping finite-sample marginal
//! coverage.

pub mod baselines;
pub mod conformal;
pub mod data;
pub mod epic;
pub mod error;
pub mod experiment;
pub mod knn;
pub mod metrics;
pub mod nn;
pub mod predictive;
pub mod scores;
mod serde_ext;
pub mod stats;

pub use conformal::{calibrate, conformal_quantile, coverage_bounds, CalibrationResult, CoverageBounds, NominalLevel};
pub use error::{Error, Result};
pub use predictive::{fit_predictive, PredictiveCdfModel, PredictiveConfig, PredictiveKind};
