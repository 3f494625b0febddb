//! Mixture density network with Monte-Carlo dropout.
//!
//! The network maps `x` to `K` mixture weights (softmax), means and standard
//! deviations (softplus) and is trained on the negative log-likelihood. At fit
//! time `T` dropout masks are frozen; the predictive CDF averages the `T` mixture
//! CDFs analytically, or in sampling mode takes the empirical CDF of score draws
//! generated from fixed uniform/normal variates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Conditional;
use crate::data::Features;
use crate::error::{Error, Result};
use crate::nn::{self, DropoutMask, Mlp, TrainConfig};

/// Lower bound on component standard deviations (normalized units).
const SD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdnConfig {
    pub components: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub mc_passes: usize,
    pub train: TrainConfig,
    /// When set, the CDF is the empirical CDF of this many draws per dropout pass.
    pub samples_per_pass: Option<usize>,
}

impl Default for MdnConfig {
    fn default() -> Self {
        Self {
            components: 3,
            hidden: vec![64, 64],
            dropout: 0.5,
            mc_passes: 100,
            train: TrainConfig { max_epochs: 300, patience: 30, batch_size: 0, ..TrainConfig::default() },
            samples_per_pass: None,
        }
    }
}

impl MdnConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::Config("MDN needs at least one component".into()));
        }
        if !(self.dropout > 0.0 && self.dropout < 1.0) {
            return Err(Error::Config(format!("dropout must lie in (0, 1), got {}", self.dropout)));
        }
        if self.mc_passes == 0 {
            return Err(Error::Config("mc_passes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Batch size by dataset size when the configured value is 0.
pub(crate) fn auto_batch(n: usize, configured: usize) -> usize {
    match configured {
        0 if n < 10_000 => 40,
        0 if n < 50_000 => 125,
        0 => 250,
        b => b,
    }
}

pub(crate) fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Mixture parameters for one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

pub(crate) fn decode(out: &[f64], k: usize) -> MixtureParams {
    let logits = &out[..k];
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    MixtureParams {
        weights: e.into_iter().map(|v| v / z).collect(),
        means: out[k..2 * k].to_vec(),
        sds: out[2 * k..3 * k].iter().map(|&r| softplus(r) + SD_FLOOR).collect(),
    }
}

/// Negative log-likelihood of `s` under the mixture encoded by `out`, with its gradient.
pub(crate) fn nll_and_grad(out: &[f64], k: usize, s: f64, grad: &mut [f64]) -> f64 {
    let p = decode(out, k);
    let log_comp: Vec<f64> = (0..k)
        .map(|j| {
            let z = (s - p.means[j]) / p.sds[j];
            p.weights[j].max(1e-300).ln() - 0.5 * z * z - p.sds[j].ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        })
        .collect();
    let mx = log_comp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + log_comp.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
    for j in 0..k {
        let resp = (log_comp[j] - lse).exp();
        let (mu, sd) = (p.means[j], p.sds[j]);
        let d = s - mu;
        grad[j] = p.weights[j] - resp;
        grad[k + j] = -resp * d / (sd * sd);
        let dsd = -resp * (d * d / (sd * sd * sd) - 1.0 / sd);
        grad[2 * k + j] = dsd * sigmoid(out[2 * k + j]);
    }
    -lse
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdnState {
    net: Mlp,
    pub components: usize,
    masks: Vec<DropoutMask>,
    /// Per-pass `(uniform, standard normal)` variates for sampling mode.
    draws: Option<Vec<Vec<(f64, f64)>>>,
    pub epochs: usize,
}

pub(crate) fn fit(x: &Features, z: &[f64], cfg: &MdnConfig, seed: u64) -> Result<MdnState> {
    cfg.validate()?;
    let k = cfg.components;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![x.p()];
    sizes.extend(&cfg.hidden);
    sizes.push(3 * k);
    let mut net = Mlp::new(&sizes, cfg.dropout, &mut rng);
    let rows: Vec<Vec<f64>> = x.rows().map(<[f64]>::to_vec).collect();
    let train_cfg = TrainConfig { batch_size: auto_batch(rows.len(), cfg.train.batch_size), ..cfg.train.clone() };
    let loss = |out: &[f64], i: usize, g: &mut [f64]| nll_and_grad(out, k, z[i], g);
    let summary = nn::train(&mut net, &rows, &loss, &train_cfg, rng.gen());
    let masks: Vec<DropoutMask> = (0..cfg.mc_passes).map(|_| net.sample_mask(&mut rng)).collect();
    let draws = cfg.samples_per_pass.map(|m| {
        (0..cfg.mc_passes)
            .map(|_| (0..m.max(1)).map(|_| (rng.gen::<f64>(), rng.sample::<f64, _>(StandardNormal))).collect())
            .collect()
    });
    Ok(MdnState { net, components: k, masks, draws, epochs: summary.epochs })
}

impl MdnState {
    pub fn mc_passes(&self) -> usize {
        self.masks.len()
    }

    /// Mixture parameters of every frozen dropout pass at a scaled input.
    pub fn pass_params(&self, x: &[f64]) -> Vec<MixtureParams> {
        self.masks.iter().map(|m| decode(&self.net.forward(x, Some(m)), self.components)).collect()
    }

    pub(crate) fn conditional(&self, x: &[f64]) -> Conditional {
        let passes = self.pass_params(x);
        if let Some(draws) = &self.draws {
            let mut samples = Vec::new();
            for (p, d) in passes.iter().zip(draws) {
                for &(u, e) in d {
                    let mut acc = 0.0;
                    let mut j = p.weights.len() - 1;
                    for (c, w) in p.weights.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            j = c;
                            break;
                        }
                    }
                    samples.push(p.means[j] + p.sds[j] * e);
                }
            }
            return Conditional::empirical(samples);
        }
        let t = passes.len() as f64;
        let mut weights = Vec::with_capacity(passes.len() * self.components);
        let mut means = Vec::with_capacity(weights.capacity());
        let mut sds = Vec::with_capacity(weights.capacity());
        for p in passes {
            weights.extend(p.weights.iter().map(|w| w / t));
            means.extend(p.means);
            sds.extend(p.sds);
        }
        Conditional::Mixture { weights, means, sds }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let out = [0.2, -0.5, 0.9, 0.1, -1.0, 0.4, 0.3, -0.2, 0.7];
        let s = 0.35;
        let mut g = [0.0; 9];
        nll_and_grad(&out, 3, s, &mut g);
        let h = 1e-6;
        let mut scratch = [0.0; 9];
        for i in 0..9 {
            let mut p = out;
            p[i] += h;
            let mut m = out;
            m[i] -= h;
            let fd = (nll_and_grad(&p, 3, s, &mut scratch) - nll_and_grad(&m, 3, s, &mut scratch)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn nll_of_single_standard_component() {
        // logit irrelevant, mean 0, softplus(raw) + floor = 1
        let raw = (1.0f64 - SD_FLOOR).exp_m1().ln();
        let mut g = [0.0; 3];
        let v = nll_and_grad(&[0.0, 0.0, raw], 1, 0.0, &mut g);
        assert!((v - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_sizes() {
        assert_eq!(auto_batch(500, 0), 40);
        assert_eq!(auto_batch(20_000, 0), 125);
        assert_eq!(auto_batch(60_000, 0), 250);
        assert_eq!(auto_batch(60_000, 7), 7);
    }
}
