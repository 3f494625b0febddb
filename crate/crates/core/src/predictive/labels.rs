//! Predictive label distributions `P(y | x, D)` for classification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mdn::auto_batch;
use crate::data::{FeatureScaler, Features};
use crate::error::{Error, Result};
use crate::nn::{self, DropoutMask, Mlp, TrainConfig};
use crate::scores::KnnClassifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPredictiveKind {
    /// k-NN label counts with a symmetric Dirichlet(1) prior.
    KnnFrequency,
    /// Softmax network averaged over frozen dropout masks.
    DropoutSoftmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelPredictiveConfig {
    pub k: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub mc_passes: usize,
    pub train: TrainConfig,
}

impl Default for LabelPredictiveConfig {
    fn default() -> Self {
        Self {
            k: 10,
            hidden: vec![64, 64],
            dropout: 0.5,
            mc_passes: 100,
            train: TrainConfig { max_epochs: 200, patience: 20, batch_size: 0, ..TrainConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPredictive {
    KnnFrequency { classifier: KnnClassifier },
    DropoutSoftmax { net: Mlp, scaler: FeatureScaler, masks: Vec<DropoutMask>, n_classes: usize },
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

impl LabelPredictive {
    pub fn fit(
        kind: LabelPredictiveKind,
        x: &Features,
        labels: &[usize],
        n_classes: usize,
        cfg: &LabelPredictiveConfig,
        seed: u64,
    ) -> Result<Self> {
        if labels.len() < super::MIN_FIT_POINTS {
            return Err(Error::InsufficientData { needed: super::MIN_FIT_POINTS, got: labels.len() });
        }
        match kind {
            LabelPredictiveKind::KnnFrequency => {
                Ok(LabelPredictive::KnnFrequency { classifier: KnnClassifier::fit(x, labels, n_classes, cfg.k)? })
            }
            LabelPredictiveKind::DropoutSoftmax => {
                if x.n() != labels.len() {
                    return Err(Error::LengthMismatch(x.n(), labels.len()));
                }
                if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
                    return Err(Error::UnknownLabel { label: l, k: n_classes });
                }
                if !(cfg.dropout > 0.0 && cfg.dropout < 1.0) || cfg.mc_passes == 0 {
                    return Err(Error::Config("dropout must lie in (0, 1) and mc_passes >= 1".into()));
                }
                let scaler = FeatureScaler::fit(x);
                let rows: Vec<Vec<f64>> = scaler.transform(x).rows().map(<[f64]>::to_vec).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut sizes = vec![x.p()];
                sizes.extend(&cfg.hidden);
                sizes.push(n_classes);
                let mut net = Mlp::new(&sizes, cfg.dropout, &mut rng);
                let loss = |out: &[f64], i: usize, g: &mut [f64]| {
                    let p = softmax(out);
                    for (j, (gj, pj)) in g.iter_mut().zip(&p).enumerate() {
                        *gj = pj - if j == labels[i] { 1.0 } else { 0.0 };
                    }
                    -p[labels[i]].max(1e-300).ln()
                };
                let train_cfg =
                    TrainConfig { batch_size: auto_batch(rows.len(), cfg.train.batch_size), ..cfg.train.clone() };
                nn::train(&mut net, &rows, &loss, &train_cfg, rng.gen());
                let masks = (0..cfg.mc_passes).map(|_| net.sample_mask(&mut rng)).collect();
                Ok(LabelPredictive::DropoutSoftmax { net, scaler, masks, n_classes })
            }
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            LabelPredictive::KnnFrequency { classifier } => classifier.n_classes,
            LabelPredictive::DropoutSoftmax { n_classes, .. } => *n_classes,
        }
    }

    /// Softmax output of a single frozen dropout pass.
    pub fn pass_probs(&self, x: &[f64], pass: usize) -> Option<Vec<f64>> {
        match self {
            LabelPredictive::DropoutSoftmax { net, scaler, masks, .. } => {
                masks.get(pass).map(|m| softmax(&net.forward(&scaler.transform_row(x), Some(m))))
            }
            LabelPredictive::KnnFrequency { .. } => None,
        }
    }

    pub fn label_dist(&self, x: &[f64]) -> Vec<f64> {
        match self {
            LabelPredictive::KnnFrequency { classifier } => {
                let counts = classifier.label_counts(x);
                let total = counts.iter().sum::<usize>() + counts.len();
                counts.into_iter().map(|c| (c + 1) as f64 / total as f64).collect()
            }
            LabelPredictive::DropoutSoftmax { masks, n_classes, .. } => {
                let mut acc = vec![0.0; *n_classes];
                for t in 0..masks.len() {
                    for (a, p) in acc.iter_mut().zip(self.pass_probs(x, t).expect("pass exists")) {
                        *a += p;
                    }
                }
                let z: f64 = acc.iter().sum();
                acc.into_iter().map(|v| v / z).collect()
            }
        }
    }
}

/// `P(y | x, D)` for a label predictive model.
pub fn predictive_label_dist(model: &LabelPredictive, x: &[f64]) -> Vec<f64> {
    model.label_dist(x)
}
