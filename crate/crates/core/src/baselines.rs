//! Comparison methods: regression split, locally weighted split, Mondrian,
//! CQR and width-scaled CQR.

use serde::{Deserialize, Serialize};

use crate::conformal::{conformal_quantile, NominalLevel};
use crate::epic::PredictionBand;
use crate::error::{Error, Result};
use crate::scores::{cqr_score, uncross, SIGMA_FLOOR};

fn bounded(threshold: f64, band: impl FnOnce() -> PredictionBand) -> PredictionBand {
    if threshold == f64::INFINITY {
        PredictionBand::full()
    } else {
        band()
    }
}

/// `g(x) +- t`.
pub fn reg_split_interval(g_x: f64, threshold: f64) -> PredictionBand {
    bounded(threshold, || PredictionBand::symmetric(g_x, threshold))
}

/// `g(x) +- t max(mad(x), 1e-6)`.
pub fn weighted_interval(g_x: f64, mad_x: f64, threshold: f64) -> PredictionBand {
    bounded(threshold, || PredictionBand::symmetric(g_x, threshold * mad_x.max(SIGMA_FLOOR)))
}

/// `[q_lo - t, q_hi + t]`.
pub fn cqr_interval(q_lo: f64, q_hi: f64, threshold: f64) -> PredictionBand {
    let (lo, hi) = uncross(q_lo, q_hi);
    bounded(threshold, || PredictionBand::new(lo - threshold, hi + threshold))
}

/// CQR score divided by the floored quantile-band width.
pub fn cqr_r_score(q_lo: f64, q_hi: f64, y: f64) -> f64 {
    let (lo, hi) = uncross(q_lo, q_hi);
    cqr_score(lo, hi, y) / (hi - lo).max(SIGMA_FLOOR)
}

/// `[q_lo - t w, q_hi + t w]` with `w = max(q_hi - q_lo, 1e-6)`.
pub fn cqr_r_interval(q_lo: f64, q_hi: f64, threshold_r: f64) -> PredictionBand {
    let (lo, hi) = uncross(q_lo, q_hi);
    let w = (hi - lo).max(SIGMA_FLOOR);
    bounded(threshold_r, || PredictionBand::new(lo - threshold_r * w, hi + threshold_r * w))
}

/// Per-bin thresholds over a difficulty statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MondrianBins {
    /// Interior edges, strictly increasing; a value `d` falls in bin
    /// `#{edges <= d}`.
    pub edges: Vec<f64>,
    #[serde(with = "crate::serde_ext::extended_f64_vec")]
    pub thresholds: Vec<f64>,
    pub counts: Vec<usize>,
    pub min_count: usize,
    pub alpha: NominalLevel,
}

/// Smallest bin size whose conformal threshold is finite at `alpha`.
pub fn default_min_count(alpha: NominalLevel) -> usize {
    let mut n = 1;
    while crate::conformal::quantile_rank(n, alpha) > n {
        n += 1;
    }
    n
}

/// Equal-mass bins of `difficulty` with a conformal threshold of `scores` in each.
///
/// Boundaries that would split tied difficulty values are dropped, and bins
/// with fewer than `min_count` points are merged into their smaller neighbour.
pub fn mondrian_calibrate(
    difficulty: &[f64],
    scores: &[f64],
    alpha: NominalLevel,
    n_bins: usize,
    min_count: usize,
) -> Result<MondrianBins> {
    if difficulty.len() != scores.len() {
        return Err(Error::LengthMismatch(difficulty.len(), scores.len()));
    }
    if n_bins == 0 {
        return Err(Error::Config("n_bins must be >= 1".into()));
    }
    if scores.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if let Some((index, &value)) = difficulty.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteScore { index, value });
    }
    let n = scores.len();
    let mut d = difficulty.to_vec();
    d.sort_by(f64::total_cmp);
    // bins as [start, end) ranges of the sorted difficulty values
    let mut cuts: Vec<usize> = (1..n_bins)
        .map(|b| (b * n + n_bins / 2) / n_bins)
        .filter(|&p| p > 0 && p < n && d[p - 1] < d[p])
        .collect();
    cuts.dedup();
    let size = |cuts: &[usize], b: usize| {
        let start = if b == 0 { 0 } else { cuts[b - 1] };
        let end = cuts.get(b).copied().unwrap_or(n);
        end - start
    };
    while !cuts.is_empty() {
        let nb = cuts.len() + 1;
        let Some(small) = (0..nb).filter(|&b| size(&cuts, b) < min_count).min_by_key(|&b| size(&cuts, b)) else {
            break;
        };
        // merge with the smaller neighbour (left on ties)
        let drop = if small == 0 {
            0
        } else if small == nb - 1 || size(&cuts, small - 1) <= size(&cuts, small + 1) {
            small - 1
        } else {
            small
        };
        cuts.remove(drop);
    }
    let edges: Vec<f64> = cuts.iter().map(|&p| 0.5 * (d[p - 1] + d[p])).collect();
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); edges.len() + 1];
    for (&di, &s) in difficulty.iter().zip(scores) {
        per_bin[edges.partition_point(|&e| e <= di)].push(s);
    }
    let thresholds = per_bin.iter().map(|s| conformal_quantile(s, alpha)).collect::<Result<Vec<_>>>()?;
    Ok(MondrianBins { edges, thresholds, counts: per_bin.iter().map(Vec::len).collect(), min_count, alpha })
}

impl MondrianBins {
    pub fn bin_of(&self, difficulty: f64) -> usize {
        self.edges.partition_point(|&e| e <= difficulty)
    }

    pub fn threshold(&self, difficulty: f64) -> f64 {
        self.thresholds[self.bin_of(difficulty)]
    }
}

/// `g(x) +- t_b` for the bin `b` containing the point's difficulty.
pub fn mondrian_interval(g_x: f64, bins: &MondrianBins, difficulty: f64) -> PredictionBand {
    reg_split_interval(g_x, bins.threshold(difficulty))
}
