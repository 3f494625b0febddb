//! Exact Gaussian-process regression with an RBF kernel.
//!
//! Hyperparameters are chosen by grid search over the log marginal likelihood on
//! a random subsample, then the model is refit on up to `max_train_points`
//! points. The score predictive at `x` is `N(mu(x), var_f(x) + noise)`.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Features;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub lengthscales: Vec<f64>,
    pub signal_vars: Vec<f64>,
    pub noise_vars: Vec<f64>,
    pub max_train_points: usize,
    /// Subsample size for the hyperparameter search.
    pub search_points: usize,
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| (lo.ln() + (hi / lo).ln() * i as f64 / (n - 1) as f64).exp()).collect()
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            lengthscales: log_grid(0.02, 2.0, 9),
            signal_vars: log_grid(0.1, 3.0, 4),
            noise_vars: log_grid(0.01, 1.0, 5),
            max_train_points: 2000,
            search_points: 300,
        }
    }
}

impl GpConfig {
    /// Single fixed hyperparameter triple.
    pub fn fixed(lengthscale: f64, signal_var: f64, noise_var: f64) -> Self {
        Self {
            lengthscales: vec![lengthscale],
            signal_vars: vec![signal_var],
            noise_vars: vec![noise_var],
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let grids = [&self.lengthscales, &self.signal_vars, &self.noise_vars];
        if grids.iter().any(|g| g.is_empty() || g.iter().any(|v| !(v.is_finite() && *v > 0.0))) {
            return Err(Error::Config("GP grids must be non-empty with positive values".into()));
        }
        if self.max_train_points == 0 {
            return Err(Error::Config("max_train_points must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHyper {
    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
        self.signal_var * (-0.5 * d2 / (self.lengthscale * self.lengthscale)).exp()
    }
}

struct GpCache {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

/// Training data and hyperparameters; the Cholesky factor is rebuilt on demand
/// after deserialization.
#[derive(Serialize, Deserialize)]
pub struct GpState {
    pub hyper: GpHyper,
    pub log_marginal_likelihood: f64,
    x: Features,
    y: Vec<f64>,
    #[serde(skip)]
    cache: OnceLock<GpCache>,
}

impl std::fmt::Debug for GpState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GpState").field("hyper", &self.hyper).field("n", &self.y.len()).finish()
    }
}

impl Clone for GpState {
    fn clone(&self) -> Self {
        Self {
            hyper: self.hyper,
            log_marginal_likelihood: self.log_marginal_likelihood,
            x: self.x.clone(),
            y: self.y.clone(),
            cache: OnceLock::new(),
        }
    }
}

fn gram(x: &Features, h: &GpHyper) -> DMatrix<f64> {
    let n = x.n();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = h.kernel(x.row(i), x.row(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += h.noise_var;
    }
    k
}

/// Cholesky with diagonal jitter escalating from 1e-8 to 1e-4 (relative to the mean diagonal).
fn factor(mut k: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok(c);
    }
    let n = k.nrows();
    let base = (0..n).map(|i| k[(i, i)]).sum::<f64>() / n.max(1) as f64;
    let mut jitter = 1e-8;
    let mut applied = 0.0;
    while jitter <= 1e-4 * 1.000_001 {
        for i in 0..n {
            k[(i, i)] += (jitter - applied) * base;
        }
        applied = jitter;
        if let Some(c) = Cholesky::new(k.clone()) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::SingularKernel { jitter: applied })
}

fn fit_exact(x: &Features, y: &[f64], h: &GpHyper) -> Result<(GpCache, f64)> {
    let chol = factor(gram(x, h))?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let n = y.len() as f64;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let lml = -0.5 * yv.dot(&alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    Ok((GpCache { chol, alpha }, lml))
}

fn subsample(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if m < n {
        idx.shuffle(rng);
        idx.truncate(m);
        idx.sort_unstable();
    }
    idx
}

pub(crate) fn fit(x: &Features, y: &[f64], cfg: &GpConfig, seed: u64) -> Result<GpState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = subsample(y.len(), cfg.max_train_points, &mut rng);
    let (xt, yt) = (x.select(&train), train.iter().map(|&i| y[i]).collect::<Vec<_>>());

    let mut best: Option<(f64, GpHyper)> = None;
    let single = cfg.lengthscales.len() * cfg.signal_vars.len() * cfg.noise_vars.len() == 1;
    if single {
        best = Some((f64::NAN, GpHyper {
            lengthscale: cfg.lengthscales[0],
            signal_var: cfg.signal_vars[0],
            noise_var: cfg.noise_vars[0],
        }));
    } else {
        let search = subsample(yt.len(), cfg.search_points.max(1), &mut rng);
        let (xs, ys) = (xt.select(&search), search.iter().map(|&i| yt[i]).collect::<Vec<_>>());
        for &lengthscale in &cfg.lengthscales {
            for &signal_var in &cfg.signal_vars {
                for &noise_var in &cfg.noise_vars {
                    let h = GpHyper { lengthscale, signal_var, noise_var };
                    let Ok((_, lml)) = fit_exact(&xs, &ys, &h) else { continue };
                    if best.is_none_or(|(b, _)| lml > b) {
                        best = Some((lml, h));
                    }
                }
            }
        }
    }
    let (_, hyper) = best.ok_or(Error::SingularKernel { jitter: 1e-4 })?;
    let (cache, lml) = fit_exact(&xt, &yt, &hyper)?;
    let state = GpState { hyper, log_marginal_likelihood: lml, x: xt, y: yt, cache: OnceLock::new() };
    let _ = state.cache.set(cache);
    Ok(state)
}

impl GpState {
    fn cache(&self) -> &GpCache {
        self.cache.get_or_init(|| {
            fit_exact(&self.x, &self.y, &self.hyper).map(|(c, _)| c).expect("refactoring a previously factored kernel")
        })
    }

    pub fn n_train(&self) -> usize {
        self.y.len()
    }

    /// Posterior latent mean and latent variance at a (scaled) input.
    pub fn posterior_latent(&self, x: &[f64]) -> (f64, f64) {
        let c = self.cache();
        let ks = DVector::from_iterator(self.x.n(), self.x.rows().map(|r| self.hyper.kernel(r, x)));
        let mean = ks.dot(&c.alpha);
        let v = c.chol.l_dirty().solve_lower_triangular(&ks).expect("non-singular factor");
        let var = (self.hyper.signal_var - v.norm_squared()).max(0.0);
        (mean, var)
    }

    /// Predictive mean and variance of a new score (latent variance plus noise).
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.posterior_latent(x);
        (m, v + self.hyper.noise_var)
    }
}
