//! Bayesian predictive distributions for nonconformity scores.
//!
//! A [`PredictiveCdfModel`] is fit on pairs `(x, s)` and exposes the posterior
//! predictive CDF `F(s | x, D)` together with its generalized inverse. Each model
//! works in normalized score units (an affine map of `s` fixed at fit time) and,
//! for a given `x`, reduces to a [`Conditional`] distribution: a Gaussian (GP), a
//! Gaussian mixture averaged over posterior draws or dropout passes (BART, MDN),
//! or an interpolated empirical CDF (k-NN, MDN sampling mode).
//!
//! Any Monte-Carlo randomness (dropout masks, sampling noise) is drawn once at fit
//! time, so `cdf` is a deterministic function of the fitted state.

pub mod bart;
pub mod gp;
pub mod io;
pub mod labels;
pub mod mdn;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureScaler, Features};
use crate::error::{Error, Result};
use crate::knn::KnnIndex;
use crate::stats::{invert_monotone, norm_cdf};

pub use bart::{BartConfig, BartState};
pub use gp::{GpConfig, GpState};
pub use labels::{predictive_label_dist, LabelPredictive, LabelPredictiveConfig, LabelPredictiveKind};
pub use mdn::{MdnConfig, MdnState};

/// Absolute bisection tolerance in normalized score units.
pub const INVERT_TOL: f64 = 1e-8;

/// Minimum number of `(x, s)` pairs accepted by [`fit_predictive`].
pub const MIN_FIT_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveKind {
    GpExact,
    MdnDropout,
    BartLite,
    KnnEmpirical,
}

impl PredictiveKind {
    pub const ALL: [PredictiveKind; 4] =
        [PredictiveKind::GpExact, PredictiveKind::MdnDropout, PredictiveKind::BartLite, PredictiveKind::KnnEmpirical];

    pub fn name(self) -> &'static str {
        match self {
            PredictiveKind::GpExact => "gp_exact",
            PredictiveKind::MdnDropout => "mdn_dropout",
            PredictiveKind::BartLite => "bart_lite",
            PredictiveKind::KnnEmpirical => "knn_empirical",
        }
    }
}

/// Affine score map `z = (s - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreNormalizer {
    pub shift: f64,
    pub scale: f64,
}

impl ScoreNormalizer {
    pub fn fit(s: &[f64]) -> Self {
        let shift = crate::stats::mean(s);
        let sd = crate::stats::std_dev(s);
        Self { shift, scale: if sd > 1e-12 { sd } else { 1.0 } }
    }

    pub fn identity() -> Self {
        Self { shift: 0.0, scale: 1.0 }
    }

    pub fn apply(&self, s: f64) -> f64 {
        (s - self.shift) / self.scale
    }

    pub fn invert(&self, z: f64) -> f64 {
        self.shift + z * self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnEmpiricalConfig {
    /// Neighbour count; `None` uses `max(50, n / 20)` capped at `n`.
    pub k: Option<usize>,
}

impl KnnEmpiricalConfig {
    pub fn resolve_k(&self, n: usize) -> usize {
        self.k.unwrap_or_else(|| 50.max(n / 20)).clamp(1, n.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictiveConfig {
    pub gp: GpConfig,
    pub mdn: MdnConfig,
    pub bart: BartConfig,
    pub knn: KnnEmpiricalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnState {
    index: KnnIndex,
    /// Normalized scores, row-aligned with `index`.
    scores: Vec<f64>,
    pub k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveState {
    Gp(GpState),
    Mdn(MdnState),
    Bart(BartState),
    Knn(KnnState),
}

/// Fitted predictive model of the score given features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictiveCdfModel {
    pub kind: PredictiveKind,
    pub normalizer: ScoreNormalizer,
    pub scaler: FeatureScaler,
    pub seed: u64,
    pub state: PredictiveState,
}

/// Fit a predictive model on `(x_i, s_i)` pairs.
pub fn fit_predictive(
    kind: PredictiveKind,
    x: &Features,
    s: &[f64],
    config: &PredictiveConfig,
    seed: u64,
) -> Result<PredictiveCdfModel> {
    if x.n() != s.len() {
        return Err(Error::LengthMismatch(x.n(), s.len()));
    }
    if s.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData { needed: MIN_FIT_POINTS, got: s.len() });
    }
    if let Some((index, &value)) = s.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteScore { index, value });
    }
    let normalizer = ScoreNormalizer::fit(s);
    let scaler = FeatureScaler::fit(x);
    let xs = scaler.transform(x);
    let z: Vec<f64> = s.iter().map(|&v| normalizer.apply(v)).collect();
    let state = match kind {
        PredictiveKind::GpExact => PredictiveState::Gp(gp::fit(&xs, &z, &config.gp, seed)?),
        PredictiveKind::MdnDropout => PredictiveState::Mdn(mdn::fit(&xs, &z, &config.mdn, seed)?),
        PredictiveKind::BartLite => PredictiveState::Bart(bart::fit(&xs, &z, &config.bart, seed)?),
        PredictiveKind::KnnEmpirical => {
            let k = config.knn.resolve_k(z.len());
            PredictiveState::Knn(KnnState { index: KnnIndex::new(xs), scores: z, k })
        }
    };
    Ok(PredictiveCdfModel { kind, normalizer, scaler, seed, state })
}

impl PredictiveCdfModel {
    /// Predictive distribution of the normalized score at `x`.
    pub fn conditional(&self, x: &[f64]) -> Conditional {
        let xs = self.scaler.transform_row(x);
        match &self.state {
            PredictiveState::Gp(g) => {
                let (mean, var) = g.predict(&xs);
                Conditional::Gaussian { mean, sd: var.sqrt() }
            }
            PredictiveState::Mdn(m) => m.conditional(&xs),
            PredictiveState::Bart(b) => b.conditional(&xs),
            PredictiveState::Knn(k) => {
                let nb = k.index.neighbors(&xs, k.k);
                Conditional::empirical(nb.iter().map(|&i| k.scores[i]).collect())
            }
        }
    }

    /// `F(s | x, D)`.
    pub fn cdf(&self, x: &[f64], s: f64) -> f64 {
        self.conditional(x).cdf(self.normalizer.apply(s))
    }

    /// Smallest `s` with `F(s | x, D) >= t`.
    pub fn invert_cdf(&self, x: &[f64], t: f64) -> f64 {
        self.normalizer.invert(self.conditional(x).invert(t))
    }

    /// View the model at a fixed `x` in raw score units.
    pub fn at(&self, x: &[f64]) -> ConditionalScore {
        ConditionalScore { dist: self.conditional(x), normalizer: self.normalizer }
    }
}

/// Conditional predictive distribution in raw score units.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalScore {
    pub dist: Conditional,
    pub normalizer: ScoreNormalizer,
}

impl ConditionalScore {
    pub fn cdf(&self, s: f64) -> f64 {
        self.dist.cdf(self.normalizer.apply(s))
    }

    pub fn invert(&self, t: f64) -> f64 {
        self.normalizer.invert(self.dist.invert(t))
    }
}

/// Predictive score distribution at one `x`, in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub enum Conditional {
    Gaussian { mean: f64, sd: f64 },
    /// Gaussian mixture; weights sum to one.
    Mixture { weights: Vec<f64>, means: Vec<f64>, sds: Vec<f64> },
    Empirical(EmpiricalCdf),
}

impl Conditional {
    pub fn empirical(values: Vec<f64>) -> Self {
        Conditional::Empirical(EmpiricalCdf::new(values))
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match self {
            Conditional::Gaussian { mean, sd } => norm_cdf((z - mean) / sd),
            Conditional::Mixture { weights, means, sds } => {
                let mut acc = 0.0;
                for ((w, m), s) in weights.iter().zip(means).zip(sds) {
                    acc += w * norm_cdf((z - m) / s);
                }
                acc.clamp(0.0, 1.0)
            }
            Conditional::Empirical(e) => e.cdf(z),
        }
    }

    fn location_scale(&self) -> (f64, f64) {
        match self {
            Conditional::Gaussian { mean, sd } => (*mean, *sd),
            Conditional::Mixture { weights, means, sds } => {
                let m: f64 = weights.iter().zip(means).map(|(w, m)| w * m).sum();
                let v: f64 = weights.iter().zip(means).zip(sds).map(|((w, mu), s)| w * (s * s + (mu - m).powi(2))).sum();
                (m, v.sqrt())
            }
            Conditional::Empirical(e) => (e.knots[0], 1.0),
        }
    }

    /// Smallest `z` with `cdf(z) >= t`, by bracket expansion and bisection for the
    /// parametric kinds and directly for empirical CDFs.
    pub fn invert(&self, t: f64) -> f64 {
        if let Conditional::Empirical(e) = self {
            return e.invert(t);
        }
        let (center, scale) = self.location_scale();
        invert_monotone(|z| self.cdf(z), t, center, scale, INVERT_TOL)
    }

    /// Mean and standard deviation of the distribution.
    pub fn moments(&self) -> (f64, f64) {
        match self {
            Conditional::Empirical(e) => {
                let v = &e.knots[usize::from(e.anchored)..];
                (crate::stats::mean(v), crate::stats::std_dev(v))
            }
            _ => self.location_scale(),
        }
    }
}

/// Piecewise-linear empirical CDF through `(v_(i), i/k)` for the sorted sample
/// `v_(1) <= ... <= v_(k)`.
///
/// Below `v_(1)` the CDF falls linearly to zero at `v_(1) - (v_(k) - v_(1)) / (k - 1)`,
/// one average spacing to the left. A sample with no spread is a point mass.
/// Tied values produce jumps; the function is right-continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    /// `k + 1` knots when anchored (the anchor first), else the `k` sample values.
    knots: Vec<f64>,
    anchored: bool,
}

impl EmpiricalCdf {
    pub fn new(mut values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "empirical CDF of an empty sample");
        values.sort_by(f64::total_cmp);
        let k = values.len();
        let spread = values[k - 1] - values[0];
        if k > 1 && spread > 0.0 {
            let anchor = values[0] - spread / (k - 1) as f64;
            let mut knots = Vec::with_capacity(k + 1);
            knots.push(anchor);
            knots.extend(values);
            Self { knots, anchored: true }
        } else {
            Self { knots: values, anchored: false }
        }
    }

    fn k(&self) -> usize {
        self.knots.len() - usize::from(self.anchored)
    }

    pub fn cdf(&self, z: f64) -> f64 {
        let k = self.k() as f64;
        if !self.anchored {
            return if z >= self.knots[0] { 1.0 } else { 0.0 };
        }
        // number of knots <= z, minus one, is the segment index i (knot i has cdf i/k)
        let cnt = self.knots.partition_point(|&v| v <= z);
        if cnt == 0 {
            return 0.0;
        }
        let i = cnt - 1;
        if i + 1 >= self.knots.len() {
            return 1.0;
        }
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        let frac = if b > a { (z - a) / (b - a) } else { 0.0 };
        ((i as f64 + frac) / k).min(1.0)
    }

    pub fn invert(&self, t: f64) -> f64 {
        if !self.anchored {
            return self.knots[0];
        }
        if t <= 0.0 {
            return self.knots[0];
        }
        let k = self.k();
        let pos = t.min(1.0) * k as f64;
        let i = (pos.floor() as usize).min(k - 1);
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        let mut z = a + (pos - i as f64) * (b - a);
        let mut guard = 0;
        while self.cdf(z) < t && guard < 64 {
            z = z.next_up();
            guard += 1;
        }
        z
    }
}
