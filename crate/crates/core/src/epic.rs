//! The EPICSCORE pipeline.
//!
//! The calibration set is split in two. On the first part a predictive model of
//! the base score given `x` is fit; on the second the transformed scores
//! `s' = F(s(x, y) | x, D)` are calibrated with split conformal. Regions are
//! `{y : s'(x, y) <= t}`, which for monotone base scores reduce to
//! `{y : s(x, y) <= F^-1(t | x, D)}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::{calibrate, CalibrationResult, NominalLevel};
use crate::data::{split_calibration_sized, cal2_size, Features};
use crate::error::{Error, Result};
use crate::predictive::io::{load_from, save_to, ModelHeader};
use crate::predictive::{
    fit_predictive, Conditional, LabelPredictive, LabelPredictiveConfig, LabelPredictiveKind, PredictiveCdfModel,
    PredictiveConfig, PredictiveKind,
};
use crate::scores::{check_probs, KnnClassifier, LabelScore, ScoreFunction};
use crate::stats::{invert_monotone, norm_quantile};

/// Smallest size accepted for either calibration part.
pub const MIN_SPLIT: usize = 5;

/// Conditional CDF of the base score, the only thing the pipeline needs from a
/// predictive model. Implemented by fitted models and by known distributions.
pub trait ScoreCdf {
    fn score_cdf(&self, x: &[f64], s: f64) -> f64;
    /// Smallest `s` with `score_cdf(x, s) >= t`.
    fn score_quantile(&self, x: &[f64], t: f64) -> f64;
}

impl ScoreCdf for PredictiveCdfModel {
    fn score_cdf(&self, x: &[f64], s: f64) -> f64 {
        self.cdf(x, s)
    }

    fn score_quantile(&self, x: &[f64], t: f64) -> f64 {
        self.invert_cdf(x, t)
    }
}

/// The same distribution at every `x`.
impl ScoreCdf for Conditional {
    fn score_cdf(&self, _: &[f64], s: f64) -> f64 {
        self.cdf(s)
    }

    fn score_quantile(&self, _: &[f64], t: f64) -> f64 {
        self.invert(t)
    }
}

/// A CDF given as a closure `(x, s) -> F(s | x)`, inverted by bisection.
pub struct FnScoreCdf<F>(pub F);

impl<F: Fn(&[f64], f64) -> f64> ScoreCdf for FnScoreCdf<F> {
    fn score_cdf(&self, x: &[f64], s: f64) -> f64 {
        (self.0)(x, s)
    }

    fn score_quantile(&self, x: &[f64], t: f64) -> f64 {
        invert_monotone(|s| (self.0)(x, s), t, 0.0, 1.0, 1e-10)
    }
}

/// Interval `[lo, hi]` in target units.
///
/// `degenerate` marks the whole real line (infinite threshold). `empty` marks a
/// band whose ends crossed; it is stored collapsed to its midpoint and covers nothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionBand {
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub lo: f64,
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub hi: f64,
    pub degenerate: bool,
    #[serde(default)]
    pub empty: bool,
}

impl PredictionBand {
    pub fn new(lo: f64, hi: f64) -> Self {
        if lo > hi {
            let mid = 0.5 * (lo + hi);
            return Self { lo: mid, hi: mid, degenerate: false, empty: true };
        }
        Self { lo, hi, degenerate: false, empty: false }
    }

    pub fn full() -> Self {
        Self { lo: f64::NEG_INFINITY, hi: f64::INFINITY, degenerate: true, empty: false }
    }

    pub fn symmetric(center: f64, half_width: f64) -> Self {
        Self::new(center - half_width, center + half_width)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, y: f64) -> bool {
        !self.empty && self.lo <= y && y <= self.hi
    }
}

/// Label set with the transformed score of every label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub labels: Vec<usize>,
    pub s_prime: Vec<f64>,
}

impl PredictionSet {
    pub fn contains(&self, y: usize) -> bool {
        self.labels.binary_search(&y).is_ok()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// How the calibration set is divided between model fitting and thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// 30% for thresholding, capped at 1000 points above 3000.
    #[default]
    Standard,
    /// `round(fraction * n)` points for thresholding.
    Fraction(f64),
}

impl SplitRule {
    pub fn cal2_size(self, n: usize) -> Result<usize> {
        match self {
            SplitRule::Standard => Ok(cal2_size(n)),
            SplitRule::Fraction(f) if f > 0.0 && f < 1.0 => Ok((f * n as f64).round() as usize),
            SplitRule::Fraction(f) => Err(Error::Config(format!("calibration fraction must lie in (0, 1), got {f}"))),
        }
    }

    pub fn split(self, n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        let all: Vec<usize> = (0..n).collect();
        let (cal1, cal2) = split_calibration_sized(&all, self.cal2_size(n)?, seed);
        for (part, got) in [("cal1", cal1.len()), ("cal2", cal2.len())] {
            if got < MIN_SPLIT {
                return Err(Error::SplitTooSmall { part, got, needed: MIN_SPLIT });
            }
        }
        Ok((cal1, cal2))
    }
}

/// Base score, predictive model of the score, and the threshold on `s'`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpicPipeline<P = PredictiveCdfModel> {
    pub score: ScoreFunction,
    pub predictive: P,
    pub calibration: CalibrationResult,
    pub n_cal1: usize,
    pub n_cal2: usize,
}

/// `s'(x, y) = F(s(x, y) | x, D)`.
pub fn epic_score<P: ScoreCdf>(pipeline: &EpicPipeline<P>, x: &[f64], y: f64) -> Result<f64> {
    let s = pipeline.score.score(x, y)?;
    Ok(pipeline.predictive.score_cdf(x, s).clamp(0.0, 1.0))
}

/// Fit the predictive on one part of the calibration set and calibrate `s'`
/// on the other.
#[allow(clippy::too_many_arguments)]
pub fn epic_calibrate(
    score: ScoreFunction,
    kind: PredictiveKind,
    x_cal: &Features,
    y_cal: &[f64],
    alpha: NominalLevel,
    rule: SplitRule,
    config: &PredictiveConfig,
    seed: u64,
) -> Result<EpicPipeline> {
    if x_cal.n() != y_cal.len() {
        return Err(Error::LengthMismatch(x_cal.n(), y_cal.len()));
    }
    let (cal1, cal2) = rule.split(y_cal.len(), seed)?;
    let x1 = x_cal.select(&cal1);
    let y1: Vec<f64> = cal1.iter().map(|&i| y_cal[i]).collect();
    let s1 = score.score_all(&x1, &y1)?;
    let predictive = fit_predictive(kind, &x1, &s1, config, seed)?;
    let y2: Vec<f64> = cal2.iter().map(|&i| y_cal[i]).collect();
    epic_calibrate_with(score, predictive, &x_cal.select(&cal2), &y2, alpha, cal1.len())
}

/// Calibrate with an already fitted (or known) predictive score distribution.
/// `x2`, `y2` must not have been used to build `predictive`.
pub fn epic_calibrate_with<P: ScoreCdf>(
    score: ScoreFunction,
    predictive: P,
    x2: &Features,
    y2: &[f64],
    alpha: NominalLevel,
    n_cal1: usize,
) -> Result<EpicPipeline<P>> {
    if x2.n() != y2.len() {
        return Err(Error::LengthMismatch(x2.n(), y2.len()));
    }
    let mut pipeline = EpicPipeline {
        score,
        predictive,
        calibration: CalibrationResult { threshold: 0.0, n_cal: 0, score_id: String::new(), alpha },
        n_cal1,
        n_cal2: y2.len(),
    };
    let s2 = epic_scores(&pipeline, x2, y2)?;
    pipeline.calibration = calibrate(&s2, alpha, format!("epic_{}", pipeline.score.id()))?;
    Ok(pipeline)
}

/// `s'` for every row.
pub fn epic_scores<P: ScoreCdf>(pipeline: &EpicPipeline<P>, x: &Features, y: &[f64]) -> Result<Vec<f64>> {
    x.rows().zip(y).map(|(r, &v)| epic_score(pipeline, r, v)).collect()
}

/// `g(x) +- max(0, F^-1(t | x))` for residual scores; weighted residuals scale
/// the radius by the spread model.
pub fn epic_interval_regression<P: ScoreCdf>(pipeline: &EpicPipeline<P>, x: &[f64]) -> Result<PredictionBand> {
    let (g, scale) = match &pipeline.score {
        ScoreFunction::Residual { g } => (g.predict(x), 1.0),
        ScoreFunction::WeightedResidual { g, mad } => (g.predict(x), mad.predict(x).max(crate::scores::SIGMA_FLOOR)),
        ScoreFunction::Cqr { .. } => return Err(Error::WrongScoreKind("cqr")),
    };
    if pipeline.calibration.is_unbounded() {
        return Ok(PredictionBand::full());
    }
    let r = pipeline.predictive.score_quantile(x, pipeline.calibration.threshold).max(0.0);
    Ok(PredictionBand::symmetric(g, scale * r))
}

/// Band for a Gaussian predictive `N(mu, sigma^2)` of the residual score:
/// `g +- max(0, mu + sigma sqrt(2) erf^-1(2t - 1))`.
pub fn epic_interval_normal_closed_form(g_val: f64, mu: f64, sigma: f64, t: f64) -> Result<PredictionBand> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidT(t));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    Ok(PredictionBand::symmetric(g_val, (mu + sigma * norm_quantile(t)).max(0.0)))
}

/// `[q_lo(x) - F^-1(t | x), q_hi(x) + F^-1(t | x)]`; the correction may be negative.
pub fn epic_interval_cqr<P: ScoreCdf>(pipeline: &EpicPipeline<P>, x: &[f64]) -> Result<PredictionBand> {
    let ScoreFunction::Cqr { q_lo, q_hi } = &pipeline.score else {
        return Err(Error::WrongScoreKind(pipeline.score.id()));
    };
    if pipeline.calibration.is_unbounded() {
        return Ok(PredictionBand::full());
    }
    let (lo, hi) = crate::scores::uncross(q_lo.predict(x), q_hi.predict(x));
    let r = pipeline.predictive.score_quantile(x, pipeline.calibration.threshold);
    Ok(PredictionBand::new(lo - r, hi + r))
}

/// Interval for whichever regression score the pipeline carries.
pub fn epic_interval<P: ScoreCdf>(pipeline: &EpicPipeline<P>, x: &[f64]) -> Result<PredictionBand> {
    match pipeline.score {
        ScoreFunction::Cqr { .. } => epic_interval_cqr(pipeline, x),
        _ => epic_interval_regression(pipeline, x),
    }
}

/// `s'(y) = sum of P(y') over labels with s(y') <= s(y)`.
///
/// Each tie group is summed over the labels in index order, so the value does
/// not depend on how the labels were sorted.
pub fn class_s_prime(predictive_probs: &[f64], base_scores: &[f64]) -> Result<Vec<f64>> {
    if predictive_probs.len() != base_scores.len() {
        return Err(Error::AlphabetMismatch { left: predictive_probs.len(), right: base_scores.len() });
    }
    let k = base_scores.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| base_scores[a].total_cmp(&base_scores[b]));
    let mut out = vec![0.0; k];
    let mut start = 0;
    while start < k {
        let level = base_scores[order[start]];
        let mut end = start + 1;
        while end < k && base_scores[order[end]] == level {
            end += 1;
        }
        let mut acc = 0.0;
        for (p, s) in predictive_probs.iter().zip(base_scores) {
            if *s <= level {
                acc += p;
            }
        }
        for &label in &order[start..end] {
            out[label] = acc;
        }
        start = end;
    }
    Ok(out)
}

/// Labels whose transformed score is at most `t`, with labels ordered by a base
/// score computed from `base_probs` (`-p`, which orders labels exactly as APS does).
pub fn epic_set_classification(predictive_probs: &[f64], base_probs: &[f64], t: f64) -> Result<PredictionSet> {
    epic_set_with_score(predictive_probs, base_probs, LabelScore::NegProb, t)
}

pub fn epic_set_with_score(
    predictive_probs: &[f64],
    base_probs: &[f64],
    score: LabelScore,
    t: f64,
) -> Result<PredictionSet> {
    if predictive_probs.len() != base_probs.len() {
        return Err(Error::AlphabetMismatch { left: predictive_probs.len(), right: base_probs.len() });
    }
    check_probs(predictive_probs)?;
    let base: Vec<f64> = (0..base_probs.len()).map(|y| score.score(base_probs, y)).collect::<Result<_>>()?;
    let s_prime = class_s_prime(predictive_probs, &base)?;
    let labels = (0..s_prime.len()).filter(|&y| s_prime[y] <= t).collect();
    Ok(PredictionSet { labels, s_prime })
}

/// Where the label predictive comes from in the classification pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    /// Predictive label distribution `P(y | x, D)`.
    Labels(LabelPredictiveKind),
    /// Treat the APS score as continuous and fit a score predictive to it.
    Continuous(PredictiveKind),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassPredictive {
    Labels(LabelPredictive),
    Continuous(PredictiveCdfModel),
}

/// EPICSCORE for classification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpicClassifier {
    pub base: KnnClassifier,
    pub base_score: LabelScore,
    pub predictive: ClassPredictive,
    pub calibration: CalibrationResult,
    pub n_cal1: usize,
    pub n_cal2: usize,
}

impl EpicClassifier {
    #[allow(clippy::too_many_arguments)]
    pub fn calibrate(
        base: KnnClassifier,
        base_score: LabelScore,
        mode: ClassMode,
        x_cal: &Features,
        labels: &[usize],
        alpha: NominalLevel,
        rule: SplitRule,
        label_cfg: &LabelPredictiveConfig,
        score_cfg: &PredictiveConfig,
        seed: u64,
    ) -> Result<Self> {
        if x_cal.n() != labels.len() {
            return Err(Error::LengthMismatch(x_cal.n(), labels.len()));
        }
        let k = base.n_classes;
        let (cal1, cal2) = rule.split(labels.len(), seed)?;
        let x1 = x_cal.select(&cal1);
        let l1: Vec<usize> = cal1.iter().map(|&i| labels[i]).collect();
        let predictive = match mode {
            ClassMode::Labels(kind) => ClassPredictive::Labels(LabelPredictive::fit(kind, &x1, &l1, k, label_cfg, seed)?),
            ClassMode::Continuous(kind) => {
                let s1: Vec<f64> = x1
                    .rows()
                    .zip(&l1)
                    .map(|(r, &y)| crate::scores::aps_score(&base.predict_proba(r), y))
                    .collect::<Result<_>>()?;
                ClassPredictive::Continuous(fit_predictive(kind, &x1, &s1, score_cfg, seed)?)
            }
        };
        let mut out = Self {
            base,
            base_score,
            predictive,
            calibration: CalibrationResult { threshold: 0.0, n_cal: 0, score_id: String::new(), alpha },
            n_cal1: cal1.len(),
            n_cal2: cal2.len(),
        };
        let s2: Vec<f64> = cal2
            .iter()
            .map(|&i| out.s_prime(x_cal.row(i)).and_then(|sp| sp.get(labels[i]).copied().ok_or(Error::UnknownLabel { label: labels[i], k })))
            .collect::<Result<_>>()?;
        out.calibration = calibrate(&s2, alpha, "epic_class")?;
        Ok(out)
    }

    /// `s'(x, y)` for every label.
    pub fn s_prime(&self, x: &[f64]) -> Result<Vec<f64>> {
        let probs = self.base.predict_proba(x);
        match &self.predictive {
            ClassPredictive::Labels(m) => {
                let base: Vec<f64> =
                    (0..probs.len()).map(|y| self.base_score.score(&probs, y)).collect::<Result<_>>()?;
                class_s_prime(&m.label_dist(x), &base)
            }
            ClassPredictive::Continuous(m) => {
                let c = m.at(x);
                (0..probs.len()).map(|y| crate::scores::aps_score(&probs, y).map(|s| c.cdf(s))).collect()
            }
        }
    }

    pub fn predict_set(&self, x: &[f64]) -> Result<PredictionSet> {
        let s_prime = self.s_prime(x)?;
        let t = self.calibration.threshold;
        Ok(PredictionSet { labels: (0..s_prime.len()).filter(|&y| s_prime[y] <= t).collect(), s_prime })
    }
}

impl EpicPipeline<PredictiveCdfModel> {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_to(path, &self.predictive.header("pipeline"), self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, p): (ModelHeader, Self) = load_from(path)?;
        if header.record != "pipeline" {
            return Err(Error::ModelFormat(format!("expected a pipeline record, found {:?}", header.record)));
        }
        Ok(p)
    }
}
