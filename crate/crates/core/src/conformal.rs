//! Split-conformal calibration: the inflated order-statistic quantile,
//! threshold records and the finite-sample coverage bounds.
//!
//! The quantile uses the `k = ceil((n + 1)(1 - alpha))`-th smallest score. When
//! `k > n` the threshold is `+inf`, which turns every region built from it into
//! the whole output space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Miscoverage level `alpha`, strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NominalLevel(f64);

impl NominalLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidAlpha(alpha))
        }
    }

    pub fn alpha(self) -> f64 {
        self.0
    }

    pub fn confidence(self) -> f64 {
        1.0 - self.0
    }
}

impl TryFrom<f64> for NominalLevel {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<NominalLevel> for f64 {
    fn from(v: NominalLevel) -> f64 {
        v.0
    }
}

/// Rank of the order statistic used as the conformal threshold (1-based).
pub fn quantile_rank(n: usize, alpha: NominalLevel) -> usize {
    let raw = (n as f64 + 1.0) * alpha.confidence();
    // (n+1)(1-alpha) is frequently an integer up to rounding noise, e.g. 100 * 0.9.
    let snapped = raw.round();
    if (raw - snapped).abs() < 1e-9 * raw.max(1.0) {
        snapped as usize
    } else {
        raw.ceil() as usize
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteScore { index, value });
    }
    Ok(())
}

/// The `ceil((n+1)(1-alpha))`-th smallest score, or `+inf` if that rank exceeds `n`.
pub fn conformal_quantile(scores: &[f64], alpha: NominalLevel) -> Result<f64> {
    check_scores(scores)?;
    let n = scores.len();
    let k = quantile_rank(n, alpha);
    if k > n {
        return Ok(f64::INFINITY);
    }
    if k == 0 {
        return Ok(scores.iter().copied().fold(f64::INFINITY, f64::min));
    }
    let mut sorted = scores.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// Calibrated threshold for one score function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub threshold: f64,
    pub n_cal: usize,
    pub score_id: String,
    pub alpha: NominalLevel,
}

impl CalibrationResult {
    /// True when the threshold is the `+inf` sentinel.
    pub fn is_unbounded(&self) -> bool {
        self.threshold == f64::INFINITY
    }

    pub fn coverage_bounds(&self) -> Result<CoverageBounds> {
        coverage_bounds(self.n_cal, self.alpha)
    }
}

/// Calibrate a threshold from held-out score values.
pub fn calibrate(
    score_values: &[f64],
    alpha: NominalLevel,
    score_id: impl Into<String>,
) -> Result<CalibrationResult> {
    let threshold = conformal_quantile(score_values, alpha)?;
    Ok(CalibrationResult {
        threshold,
        n_cal: score_values.len(),
        score_id: score_id.into(),
        alpha,
    })
}

/// Marginal coverage bounds `[1 - alpha, 1 - alpha + 1/(1 + n2)]`.
///
/// `upper` keeps the raw value; `clamped` reports whether it exceeds one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageBounds {
    pub lower: f64,
    pub upper: f64,
    pub n2: usize,
    pub clamped: bool,
}

impl CoverageBounds {
    pub fn upper_clamped(&self) -> f64 {
        self.upper.min(1.0)
    }
}

pub fn coverage_bounds(n2: usize, alpha: NominalLevel) -> Result<CoverageBounds> {
    if n2 < 1 {
        return Err(Error::InvalidN(format!("n2 must be >= 1, got {n2}")));
    }
    let lower = alpha.confidence();
    let upper = lower + 1.0 / (1.0 + n2 as f64);
    Ok(CoverageBounds { lower, upper, n2, clamped: upper > 1.0 })
}
