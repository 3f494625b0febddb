//! Base predictors and the nonconformity scores built on them.

use serde::{Deserialize, Serialize};

use crate::data::{FeatureScaler, Features};
use crate::error::{Error, Result};
use crate::knn::KnnIndex;
use crate::nn::{self, Mlp, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Floor applied to spread estimates and interval widths used as divisors.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    KnnMean,
    KnnQuantile,
    MlpMean,
    MlpPinball,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    /// Neighbours for the k-NN kinds.
    pub k: usize,
    /// Target quantile level for the quantile kinds.
    pub quantile: f64,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            kind: PredictorKind::KnnMean,
            k: 10,
            quantile: 0.5,
            hidden: vec![32, 32],
            train: TrainConfig { learning_rate: 3e-3, max_epochs: 300, patience: 25, ..TrainConfig::default() },
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn knn_mean(k: usize) -> Self {
        Self { kind: PredictorKind::KnnMean, k, ..Self::default() }
    }

    pub fn knn_quantile(k: usize, quantile: f64) -> Self {
        Self { kind: PredictorKind::KnnQuantile, k, quantile, ..Self::default() }
    }

    pub fn with_kind(&self, kind: PredictorKind, quantile: f64) -> Self {
        Self { kind, quantile, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum PredictorModel {
    Knn { index: KnnIndex, targets: Vec<f64>, k: usize },
    Mlp { net: Mlp, y_mean: f64, y_scale: f64 },
}

/// A fitted point or quantile regressor `x -> R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub kind: PredictorKind,
    pub quantile: f64,
    scaler: FeatureScaler,
    model: PredictorModel,
}

pub fn fit_base_predictor(config: &PredictorConfig, x: &Features, y: &[f64]) -> Result<Predictor> {
    let n = x.n();
    if n != y.len() {
        return Err(Error::LengthMismatch(n, y.len()));
    }
    if !(0.0..=1.0).contains(&config.quantile) {
        return Err(Error::Config(format!("quantile level must be in [0, 1], got {}", config.quantile)));
    }
    let scaler = FeatureScaler::fit(x);
    let xs = scaler.transform(x);
    let model = match config.kind {
        PredictorKind::KnnMean | PredictorKind::KnnQuantile => {
            if config.k == 0 || n < config.k {
                return Err(Error::InsufficientData { needed: config.k.max(1), got: n });
            }
            PredictorModel::Knn { index: KnnIndex::new(xs), targets: y.to_vec(), k: config.k }
        }
        PredictorKind::MlpMean | PredictorKind::MlpPinball => {
            if n < 10 {
                return Err(Error::InsufficientData { needed: 10, got: n });
            }
            let y_mean = crate::stats::mean(y);
            let y_scale = crate::stats::std_dev(y).max(SIGMA_FLOOR);
            let yn: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();
            let rows: Vec<Vec<f64>> = xs.rows().map(<[f64]>::to_vec).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut sizes = vec![x.p()];
            sizes.extend(&config.hidden);
            sizes.push(1);
            let mut net = Mlp::new(&sizes, 0.0, &mut rng);
            let q = config.quantile;
            let pinball = config.kind == PredictorKind::MlpPinball;
            let loss = |out: &[f64], i: usize, g: &mut [f64]| {
                let u = yn[i] - out[0];
                if pinball {
                    let w = if u < 0.0 { q - 1.0 } else { q };
                    g[0] = -w;
                    w * u
                } else {
                    g[0] = -u;
                    0.5 * u * u
                }
            };
            nn::train(&mut net, &rows, &loss, &config.train, config.seed.wrapping_add(1));
            PredictorModel::Mlp { net, y_mean, y_scale }
        }
    };
    Ok(Predictor { kind: config.kind, quantile: config.quantile, scaler, model })
}

impl Predictor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let xs = self.scaler.transform_row(x);
        match &self.model {
            PredictorModel::Knn { index, targets, k } => {
                let nb = index.neighbors(&xs, *k);
                match self.kind {
                    PredictorKind::KnnQuantile => {
                        let mut v: Vec<f64> = nb.iter().map(|&i| targets[i]).collect();
                        v.sort_by(f64::total_cmp);
                        crate::stats::sorted_quantile(&v, self.quantile)
                    }
                    _ => nb.iter().map(|&i| targets[i]).sum::<f64>() / nb.len() as f64,
                }
            }
            PredictorModel::Mlp { net, y_mean, y_scale } => y_mean + y_scale * net.forward(&xs, None)[0],
        }
    }
}

/// Predictions supplied by an external model, looked up by exact feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupPredictor {
    keys: Vec<Vec<u64>>,
    values: Vec<f64>,
}

impl LookupPredictor {
    pub fn new(x: &Features, values: &[f64]) -> Result<Self> {
        if x.n() != values.len() {
            return Err(Error::RowCountMismatch { expected: x.n(), got: values.len() });
        }
        let mut pairs: Vec<(Vec<u64>, f64)> = x.rows().map(Self::key).zip(values.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        let (keys, values) = pairs.into_iter().unzip();
        Ok(Self { keys, values })
    }

    fn key(row: &[f64]) -> Vec<u64> {
        row.iter().map(|v| v.to_bits()).collect()
    }

    /// NaN for rows that were not supplied.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.keys.binary_search(&Self::key(x)) {
            Ok(i) => self.values[i],
            Err(_) => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasePredictor {
    Fitted(Predictor),
    Lookup(LookupPredictor),
}

impl BasePredictor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            BasePredictor::Fitted(p) => p.predict(x),
            BasePredictor::Lookup(p) => p.predict(x),
        }
    }
}

impl From<Predictor> for BasePredictor {
    fn from(p: Predictor) -> Self {
        BasePredictor::Fitted(p)
    }
}

pub fn residual_score(g_x: f64, y: f64) -> f64 {
    (y - g_x).abs()
}

pub fn cqr_score(q_lo: f64, q_hi: f64, y: f64) -> f64 {
    (q_lo - y).max(y - q_hi)
}

pub fn weighted_residual_score(g_x: f64, mad_x: f64, y: f64) -> f64 {
    (y - g_x).abs() / mad_x.max(SIGMA_FLOOR)
}

/// Quantile pair with crossing removed by sorting.
pub fn uncross(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Regression nonconformity score with the predictors it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFunction {
    Residual { g: BasePredictor },
    WeightedResidual { g: BasePredictor, mad: BasePredictor },
    Cqr { q_lo: BasePredictor, q_hi: BasePredictor },
}

impl ScoreFunction {
    pub fn id(&self) -> &'static str {
        match self {
            ScoreFunction::Residual { .. } => "residual",
            ScoreFunction::WeightedResidual { .. } => "weighted_residual",
            ScoreFunction::Cqr { .. } => "cqr",
        }
    }

    pub fn score(&self, x: &[f64], y: f64) -> Result<f64> {
        let s = match self {
            ScoreFunction::Residual { g } => residual_score(g.predict(x), y),
            ScoreFunction::WeightedResidual { g, mad } => weighted_residual_score(g.predict(x), mad.predict(x), y),
            ScoreFunction::Cqr { q_lo, q_hi } => {
                let (lo, hi) = uncross(q_lo.predict(x), q_hi.predict(x));
                cqr_score(lo, hi, y)
            }
        };
        if s.is_finite() {
            Ok(s)
        } else {
            Err(Error::NonFiniteScore { index: 0, value: s })
        }
    }

    pub fn score_all(&self, x: &Features, y: &[f64]) -> Result<Vec<f64>> {
        x.rows()
            .zip(y)
            .enumerate()
            .map(|(i, (r, &v))| {
                self.score(r, v).map_err(|e| match e {
                    Error::NonFiniteScore { value, .. } => Error::NonFiniteScore { index: i, value },
                    e => e,
                })
            })
            .collect()
    }
}

pub fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidProbabilities("empty".into()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidProbabilities("entries must be finite and non-negative".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidProbabilities(format!("entries sum to {total}")));
    }
    Ok(())
}

/// Adaptive prediction sets score: total probability of labels strictly more
/// probable than `y`.
pub fn aps_score(probs: &[f64], y: usize) -> Result<f64> {
    check_probs(probs)?;
    let py = *probs.get(y).ok_or(Error::UnknownLabel { label: y, k: probs.len() })?;
    Ok(probs.iter().filter(|&&p| p > py).sum())
}

/// Negative predicted probability of `y`.
pub fn neg_prob_score(probs: &[f64], y: usize) -> Result<f64> {
    check_probs(probs)?;
    probs.get(y).map(|p| -p).ok_or(Error::UnknownLabel { label: y, k: probs.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScore {
    Aps,
    NegProb,
}

impl LabelScore {
    pub fn score(self, probs: &[f64], y: usize) -> Result<f64> {
        match self {
            LabelScore::Aps => aps_score(probs, y),
            LabelScore::NegProb => neg_prob_score(probs, y),
        }
    }
}

/// k-NN classifier returning raw neighbour label frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnClassifier {
    scaler: FeatureScaler,
    index: KnnIndex,
    labels: Vec<usize>,
    pub n_classes: usize,
    pub k: usize,
}

impl KnnClassifier {
    pub fn fit(x: &Features, labels: &[usize], n_classes: usize, k: usize) -> Result<Self> {
        if x.n() != labels.len() {
            return Err(Error::LengthMismatch(x.n(), labels.len()));
        }
        if k == 0 || x.n() < k {
            return Err(Error::InsufficientData { needed: k.max(1), got: x.n() });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::UnknownLabel { label: l, k: n_classes });
        }
        let scaler = FeatureScaler::fit(x);
        Ok(Self { index: KnnIndex::new(scaler.transform(x)), scaler, labels: labels.to_vec(), n_classes, k })
    }

    pub fn label_counts(&self, x: &[f64]) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for i in self.index.neighbors(&self.scaler.transform_row(x), self.k) {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let counts = self.label_counts(x);
        let total: usize = counts.iter().sum();
        counts.into_iter().map(|c| c as f64 / total as f64).collect()
    }
}
