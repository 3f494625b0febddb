//! Minimal dense network with ReLU hidden layers, inverted dropout and Adam.
//!
//! Shared by the MLP base predictors and the mixture-density predictive model.
//! Loss functions are supplied as closures over the raw output vector, so the
//! same trainer fits mean, pinball, mixture and softmax heads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    n_in: usize,
    n_out: usize,
    /// Row-major `n_out x n_in`.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn new(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        Self {
            n_in,
            n_out,
            w: (0..n_in * n_out).map(|_| rng.gen_range(-bound..bound)).collect(),
            b: (0..n_out).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            out.push(self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

/// One dropout mask per hidden layer; `true` keeps the unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutMask(pub Vec<Vec<bool>>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    pub dropout: f64,
}

/// Per-sample activations kept for backprop.
struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    keep: Vec<Vec<bool>>,
}

impl Mlp {
    /// `sizes = [n_in, hidden..., n_out]`; weights use fan-in scaled uniform init.
    pub fn new(sizes: &[usize], dropout: f64, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        let layers = sizes.windows(2).map(|w| Dense::new(w[0], w[1], rng)).collect();
        Self { layers, dropout }
    }

    pub fn n_hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn sample_mask(&self, rng: &mut impl Rng) -> DropoutMask {
        DropoutMask(
            self.layers[..self.layers.len() - 1]
                .iter()
                .map(|l| (0..l.n_out).map(|_| self.dropout <= 0.0 || rng.gen::<f64>() >= self.dropout).collect())
                .collect(),
        )
    }

    /// Forward pass. With a mask, dropped units are zeroed and kept units scaled by
    /// `1 / (1 - dropout)`; without one, the network is used deterministically.
    pub fn forward(&self, x: &[f64], mask: Option<&DropoutMask>) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        let scale = if self.dropout > 0.0 { 1.0 / (1.0 - self.dropout) } else { 1.0 };
        for (li, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if li < last {
                for (u, v) in next.iter_mut().enumerate() {
                    *v = v.max(0.0);
                    if let Some(m) = mask {
                        *v = if m.0[li][u] { *v * scale } else { 0.0 };
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    fn forward_trace(&self, x: &[f64], mask: Option<&DropoutMask>) -> (Vec<f64>, Trace) {
        let last = self.layers.len() - 1;
        let scale = if self.dropout > 0.0 { 1.0 / (1.0 - self.dropout) } else { 1.0 };
        let mut trace = Trace { inputs: Vec::new(), pre: Vec::new(), keep: Vec::new() };
        let mut cur = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(&cur, &mut z);
            trace.inputs.push(std::mem::take(&mut cur));
            if li < last {
                let keep: Vec<bool> = match mask {
                    Some(m) => m.0[li].clone(),
                    None => vec![true; z.len()],
                };
                let s = if mask.is_some() { scale } else { 1.0 };
                cur = z.iter().zip(&keep).map(|(v, k)| if *k { v.max(0.0) * s } else { 0.0 }).collect();
                trace.keep.push(keep);
            } else {
                cur = z.clone();
            }
            trace.pre.push(z);
        }
        (cur, trace)
    }

    fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut Grads, with_dropout: bool) {
        let last = self.layers.len() - 1;
        let scale = if with_dropout && self.dropout > 0.0 { 1.0 / (1.0 - self.dropout) } else { 1.0 };
        let mut delta = grad_out.to_vec();
        for li in (0..=last).rev() {
            let layer = &self.layers[li];
            if li < last {
                for (u, d) in delta.iter_mut().enumerate() {
                    let active = trace.keep[li][u] && trace.pre[li][u] > 0.0;
                    *d = if active { *d * scale } else { 0.0 };
                }
            }
            let input = &trace.inputs[li];
            let (gw, gb) = (&mut grads.w[li], &mut grads.b[li]);
            for o in 0..layer.n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * layer.n_in..(o + 1) * layer.n_in];
                for (g, v) in row.iter_mut().zip(input) {
                    *g += d * v;
                }
            }
            if li > 0 {
                let mut prev = vec![0.0; layer.n_in];
                for o in 0..layer.n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                delta = prev;
            }
        }
    }
}

struct Grads {
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl Grads {
    fn zeros(net: &Mlp) -> Self {
        Self {
            w: net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    fn reset(&mut self) {
        self.w.iter_mut().chain(self.b.iter_mut()).for_each(|v| v.iter_mut().for_each(|g| *g = 0.0));
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Grads,
    v: Grads,
}

impl Adam {
    fn new(net: &Mlp, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Grads::zeros(net), v: Grads::zeros(net) }
    }

    fn step(&mut self, net: &mut Mlp, g: &Grads, batch: usize) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let inv = 1.0 / batch as f64;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                let gi = g[i] * inv;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        };
        for (li, layer) in net.layers.iter_mut().enumerate() {
            update(&mut layer.w, &g.w[li], &mut self.m.w[li], &mut self.v.w[li]);
            update(&mut layer.b, &g.b[li], &mut self.m.b[li], &mut self.v.b[li]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Multiplicative learning-rate decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 40,
            max_epochs: 500,
            patience: 30,
            lr_decay: 0.99,
            decay_every: 5,
            val_fraction: 0.3,
        }
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_val_loss: f64,
}

/// Per-sample loss: `(output, sample index, gradient buffer) -> loss`.
pub type LossFn<'a> = dyn Fn(&[f64], usize, &mut [f64]) -> f64 + 'a;

/// Train `net` on rows `x` with minibatch Adam and early stopping on a held-out
/// validation slice. Dropout (if configured on the net) is active during training
/// and off for validation. The best-validation weights are restored at the end.
pub fn train(net: &mut Mlp, x: &[Vec<f64>], loss: &LossFn, cfg: &TrainConfig, seed: u64) -> TrainSummary {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.shuffle(&mut rng);
    let n_val = if x.len() >= 10 { ((x.len() as f64) * cfg.val_fraction).round() as usize } else { 0 };
    let (val, fit) = idx.split_at(n_val);
    let val = val.to_vec();
    let mut fit = fit.to_vec();
    let n_out = net.n_out();
    let mut grad_out = vec![0.0; n_out];
    let mut grads = Grads::zeros(net);
    let mut adam = Adam::new(net, cfg.learning_rate);
    let with_dropout = net.dropout > 0.0;

    let eval = |net: &Mlp, set: &[usize], buf: &mut [f64]| -> f64 {
        set.iter().map(|&i| loss(&net.forward(&x[i], None), i, buf)).sum::<f64>() / set.len().max(1) as f64
    };

    let mut best = net.clone();
    let mut best_loss = f64::INFINITY;
    let mut since_best = 0;
    let mut epochs = 0;
    for epoch in 0..cfg.max_epochs {
        epochs = epoch + 1;
        fit.shuffle(&mut rng);
        for batch in fit.chunks(cfg.batch_size.max(1)) {
            grads.reset();
            for &i in batch {
                let mask = with_dropout.then(|| net.sample_mask(&mut rng));
                let (out, trace) = net.forward_trace(&x[i], mask.as_ref());
                grad_out.iter_mut().for_each(|g| *g = 0.0);
                loss(&out, i, &mut grad_out);
                net.backward(&trace, &grad_out, &mut grads, with_dropout);
            }
            adam.step(net, &grads, batch.len());
        }
        if cfg.decay_every > 0 && epochs % cfg.decay_every == 0 {
            adam.lr *= cfg.lr_decay;
        }
        let monitor = if val.is_empty() { &fit } else { &val };
        let l = eval(net, monitor, &mut grad_out);
        if l < best_loss - 1e-9 {
            best_loss = l;
            best = net.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    *net = best;
    TrainSummary { epochs, best_val_loss: best_loss }
}

#[cfg(test)]
mod tests {
    use super::*;

    // central finite differences on the raw parameter vector
    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[3, 5, 4, 2], 0.3, &mut rng);
        let x = vec![0.3, -1.2, 0.8];
        let mask = net.sample_mask(&mut rng);
        let target = [0.5, -0.25];
        let lossf = |out: &[f64]| out.iter().zip(&target).map(|(o, t)| 0.5 * (o - t).powi(2)).sum::<f64>();
        let (out, trace) = net.forward_trace(&x, Some(&mask));
        let g_out: Vec<f64> = out.iter().zip(&target).map(|(o, t)| o - t).collect();
        let mut grads = Grads::zeros(&net);
        net.backward(&trace, &g_out, &mut grads, true);
        let h = 1e-6;
        for li in 0..net.layers.len() {
            for wi in 0..net.layers[li].w.len() {
                let mut plus = net.clone();
                plus.layers[li].w[wi] += h;
                let mut minus = net.clone();
                minus.layers[li].w[wi] -= h;
                let fd = (lossf(&plus.forward(&x, Some(&mask))) - lossf(&minus.forward(&x, Some(&mask)))) / (2.0 * h);
                assert!((fd - grads.w[li][wi]).abs() < 1e-6, "layer {li} w{wi}: {fd} vs {}", grads.w[li][wi]);
            }
        }
    }

    #[test]
    fn fits_a_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 100.0 - 1.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] + 0.5).collect();
        let mut net = Mlp::new(&[1, 16, 1], 0.0, &mut rng);
        let loss = |out: &[f64], i: usize, g: &mut [f64]| {
            let d = out[0] - y[i];
            g[0] = d;
            0.5 * d * d
        };
        let cfg = TrainConfig { learning_rate: 0.01, max_epochs: 300, ..Default::default() };
        let summary = train(&mut net, &x, &loss, &cfg, 5);
        assert!(summary.best_val_loss < 1e-3, "{summary:?}");
    }

    #[test]
    fn masked_forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::new(&[2, 8, 8, 3], 0.5, &mut rng);
        let mask = net.sample_mask(&mut rng);
        let a = net.forward(&[0.1, 0.2], Some(&mask));
        let b = net.forward(&[0.1, 0.2], Some(&mask));
        assert_eq!(a, b);
    }
}
