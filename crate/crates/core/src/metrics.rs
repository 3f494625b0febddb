//! Evaluation metrics for prediction bands and label sets.

use serde::{Deserialize, Serialize};

use crate::conformal::NominalLevel;
use crate::epic::{PredictionBand, PredictionSet};
use crate::error::{Error, Result};
use crate::stats::pearson;

/// Size-stratification bins used by [`ssc`] unless configured otherwise.
pub const SSC_BINS: usize = 15;

/// A region that can be checked for membership of an outcome.
pub trait Covers<Y> {
    fn covers(&self, y: Y) -> bool;
}

impl Covers<f64> for PredictionBand {
    fn covers(&self, y: f64) -> bool {
        self.contains(y)
    }
}

impl Covers<usize> for PredictionSet {
    fn covers(&self, y: usize) -> bool {
        self.contains(y)
    }
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::LengthMismatch(a, b))
    }
}

/// Mean interval score: width plus `2/alpha` times the distance of each miss.
pub fn aisl(bands: &[PredictionBand], ys: &[f64], alpha: NominalLevel) -> Result<f64> {
    same_len(bands.len(), ys.len())?;
    if bands.iter().any(|b| b.degenerate) {
        return Err(Error::DegenerateBand);
    }
    let a = alpha.alpha();
    let total: f64 = bands
        .iter()
        .zip(ys)
        .map(|(b, &y)| {
            let under = if y < b.lo { (2.0 / a) * (b.lo - y) } else { 0.0 };
            let over = if y > b.hi { (2.0 / a) * (y - b.hi) } else { 0.0 };
            b.width() + under + over
        })
        .sum();
    Ok(total / bands.len() as f64)
}

/// Fraction of outcomes inside their region.
pub fn marginal_coverage<R: Covers<Y>, Y: Copy>(regions: &[R], ys: &[Y]) -> Result<f64> {
    same_len(regions.len(), ys.len())?;
    if regions.is_empty() {
        return Err(Error::InvalidN("no test points".into()));
    }
    let hit = regions.iter().zip(ys).filter(|(r, &y)| r.covers(y)).count();
    Ok(hit as f64 / regions.len() as f64)
}

pub fn mean_interval_length(bands: &[PredictionBand]) -> f64 {
    bands.iter().map(PredictionBand::width).sum::<f64>() / bands.len() as f64
}

/// `|corr(covered, width)|`, undefined when either vector is constant.
pub fn coverage_width_corr(bands: &[PredictionBand], ys: &[f64]) -> Option<f64> {
    if bands.len() != ys.len() {
        return None;
    }
    let c: Vec<f64> = bands.iter().zip(ys).map(|(b, &y)| f64::from(u8::from(b.contains(y)))).collect();
    let w: Vec<f64> = bands.iter().map(PredictionBand::width).collect();
    if w.iter().any(|v| !v.is_finite()) {
        return None;
    }
    pearson(&c, &w).map(f64::abs)
}

/// Minimum coverage across set-size strata: sizes `0..g-1` individually and
/// everything of size `>= g` together. Strata with no sets are skipped.
pub fn ssc(sets: &[PredictionSet], ys: &[usize], g: usize) -> Option<f64> {
    if sets.len() != ys.len() || g == 0 {
        return None;
    }
    let mut hits = vec![0usize; g + 1];
    let mut totals = vec![0usize; g + 1];
    for (s, &y) in sets.iter().zip(ys) {
        let bin = s.len().min(g);
        totals[bin] += 1;
        hits[bin] += usize::from(s.contains(y));
    }
    totals
        .iter()
        .zip(&hits)
        .filter(|(t, _)| **t > 0)
        .map(|(&t, &h)| h as f64 / t as f64)
        .min_by(f64::total_cmp)
}

/// Metrics of one method on one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub run: usize,
    pub seed: u64,
    pub alpha: NominalLevel,
    pub n_test: usize,
    pub amc: f64,
    /// Over non-degenerate bands; absent for classification or when all are degenerate.
    pub aisl: Option<f64>,
    pub mean_il: Option<f64>,
    pub pearson_rho: Option<f64>,
    pub ssc: Option<f64>,
    pub mean_set_size: Option<f64>,
    pub n_degenerate: usize,
    /// Size of the threshold-calibration part, for coverage bounds.
    pub n_cal2: usize,
}

impl MetricsReport {
    pub fn regression(
        method: &str,
        bands: &[PredictionBand],
        ys: &[f64],
        alpha: NominalLevel,
        n_cal2: usize,
    ) -> Result<Self> {
        let amc = marginal_coverage(bands, ys)?;
        let (fb, fy): (Vec<PredictionBand>, Vec<f64>) =
            bands.iter().zip(ys).filter(|(b, _)| !b.degenerate).map(|(b, y)| (*b, *y)).unzip();
        let n_degenerate = bands.len() - fb.len();
        let (aisl_v, il) = if fb.is_empty() { (None, None) } else { (Some(aisl(&fb, &fy, alpha)?), Some(mean_interval_length(&fb))) };
        Ok(Self {
            method: method.into(),
            run: 0,
            seed: 0,
            alpha,
            n_test: bands.len(),
            amc,
            aisl: aisl_v,
            mean_il: il,
            pearson_rho: if n_degenerate == 0 { coverage_width_corr(bands, ys) } else { None },
            ssc: None,
            mean_set_size: None,
            n_degenerate,
            n_cal2,
        })
    }

    pub fn classification(
        method: &str,
        sets: &[PredictionSet],
        ys: &[usize],
        alpha: NominalLevel,
        n_cal2: usize,
    ) -> Result<Self> {
        Ok(Self {
            method: method.into(),
            run: 0,
            seed: 0,
            alpha,
            n_test: sets.len(),
            amc: marginal_coverage(sets, ys)?,
            aisl: None,
            mean_il: None,
            pearson_rho: None,
            ssc: ssc(sets, ys, SSC_BINS),
            mean_set_size: Some(sets.iter().map(PredictionSet::len).sum::<usize>() as f64 / sets.len() as f64),
            n_degenerate: 0,
            n_cal2,
        })
    }
}
