//! Homoscedastic Bayesian additive regression trees.
//!
//! Standard sum-of-trees model `s = sum_j g(x; T_j, M_j) + e`, `e ~ N(0, sigma^2)`,
//! sampled by Bayesian backfitting. Each tree update proposes a grow, prune or
//! change move, accepted with the Metropolis-Hastings ratio computed from leaf
//! likelihoods with the leaf means integrated out. Leaf means and `sigma^2` are
//! then drawn from their conjugate full conditionals.
//!
//! Priors follow the usual defaults: split probability `alpha (1 + d)^-beta`,
//! leaf means `N(0, (0.5 / (k sqrt(m)))^2)` on a response rescaled to
//! `[-0.5, 0.5]`, and `sigma^2 ~ nu lambda / chi^2_nu` with `lambda` set so the
//! prior puts mass `q` below the sample variance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::Conditional;
use crate::data::Features;
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BartConfig {
    pub trees: usize,
    pub burn_in: usize,
    pub draws: usize,
    pub thin: usize,
    pub chains: usize,
    /// Tree prior: `P(split at depth d) = alpha (1 + d)^-beta`.
    pub alpha: f64,
    pub beta: f64,
    /// Leaf prior scale: `tau = 0.5 / (k sqrt(m))`.
    pub k: f64,
    pub nu: f64,
    pub q: f64,
    pub p_grow: f64,
    pub p_prune: f64,
    pub p_change: f64,
    pub max_cutpoints: usize,
    pub min_leaf_size: usize,
}

impl Default for BartConfig {
    fn default() -> Self {
        Self {
            trees: 20,
            burn_in: 200,
            draws: 200,
            thin: 1,
            chains: 1,
            alpha: 0.95,
            beta: 2.0,
            k: 2.0,
            nu: 3.0,
            q: 0.9,
            p_grow: 0.35,
            p_prune: 0.35,
            p_change: 0.3,
            max_cutpoints: 100,
            min_leaf_size: 5,
        }
    }
}

impl BartConfig {
    fn validate(&self) -> Result<()> {
        if self.trees == 0 || self.draws == 0 || self.thin == 0 || self.chains == 0 {
            return Err(Error::Config("BART needs trees, draws, thin and chains >= 1".into()));
        }
        if [self.p_grow, self.p_prune, self.p_change].iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || self.p_grow <= 0.0
            || self.p_prune <= 0.0
        {
            return Err(Error::Config("BART move probabilities must be non-negative with grow, prune > 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.beta >= 0.0 && self.k > 0.0 && self.nu > 0.0) {
            return Err(Error::Config("invalid BART prior parameters".into()));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::Config("BART q must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn split_prob(&self, depth: u32) -> f64 {
        self.alpha * (1.0 + depth as f64).powf(-self.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Node {
    var: usize,
    cut: f64,
    left: usize,
    right: usize,
    parent: usize,
    depth: u32,
    value: f64,
}

impl Node {
    fn leaf(parent: usize, depth: u32) -> Self {
        Self { var: 0, cut: 0.0, left: NONE, right: NONE, parent, depth, value: 0.0 }
    }

    fn is_leaf(&self) -> bool {
        self.left == NONE
    }
}

/// Binary tree in an arena; removed slots are recycled through `free`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
    free: Vec<usize>,
}

impl Tree {
    pub(crate) fn stump() -> Self {
        Self { nodes: vec![Node::leaf(NONE, 0)], free: Vec::new() }
    }

    fn alloc(&mut self, node: Node) -> usize {
        if let Some(i) = self.free.pop() {
            self.nodes[i] = node;
            i
        } else {
            self.nodes.push(node);
            self.nodes.len() - 1
        }
    }

    fn live(&self) -> impl Iterator<Item = usize> + '_ {
        // walk from the root so freed slots are never visited
        let mut stack = vec![0usize];
        std::iter::from_fn(move || {
            let i = stack.pop()?;
            let n = &self.nodes[i];
            if !n.is_leaf() {
                stack.push(n.right);
                stack.push(n.left);
            }
            Some(i)
        })
    }

    pub(crate) fn leaves(&self) -> Vec<usize> {
        self.live().filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    /// Internal nodes whose children are both leaves.
    pub(crate) fn prunable(&self) -> Vec<usize> {
        self.live()
            .filter(|&i| {
                let n = &self.nodes[i];
                !n.is_leaf() && self.nodes[n.left].is_leaf() && self.nodes[n.right].is_leaf()
            })
            .collect()
    }

    pub(crate) fn leaf_of(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return i;
            }
            i = if x[n.var] < n.cut { n.left } else { n.right };
        }
    }

    pub(crate) fn grow(&mut self, leaf: usize, var: usize, cut: f64) -> (usize, usize) {
        let d = self.nodes[leaf].depth;
        let l = self.alloc(Node::leaf(leaf, d + 1));
        let r = self.alloc(Node::leaf(leaf, d + 1));
        let n = &mut self.nodes[leaf];
        n.var = var;
        n.cut = cut;
        n.left = l;
        n.right = r;
        (l, r)
    }

    pub(crate) fn prune(&mut self, node: usize) {
        let (l, r) = (self.nodes[node].left, self.nodes[node].right);
        self.free.push(l);
        self.free.push(r);
        self.nodes[node].left = NONE;
        self.nodes[node].right = NONE;
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_of(x)].value
    }

    pub(crate) fn depth(&self, node: usize) -> u32 {
        self.nodes[node].depth
    }

    pub(crate) fn split(&self, node: usize) -> (usize, f64) {
        (self.nodes[node].var, self.nodes[node].cut)
    }

    pub(crate) fn children(&self, node: usize) -> (usize, usize) {
        (self.nodes[node].left, self.nodes[node].right)
    }
}

/// Sufficient statistics of the residuals in one leaf.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct LeafStats {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl LeafStats {
    pub(crate) fn from(r: &[f64]) -> Self {
        Self { n: r.len(), sum: r.iter().sum(), sum_sq: r.iter().map(|v| v * v).sum() }
    }
}

/// Log marginal likelihood of a leaf's residuals with the leaf mean integrated
/// against its `N(0, tau2)` prior.
pub(crate) fn leaf_log_lik(s: LeafStats, sigma2: f64, tau2: f64) -> f64 {
    let n = s.n as f64;
    let denom = sigma2 + n * tau2;
    -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() + 0.5 * (sigma2 / denom).ln() - s.sum_sq / (2.0 * sigma2)
        + tau2 * s.sum * s.sum / (2.0 * sigma2 * denom)
}

/// Move probabilities `(grow, prune, change)` for a tree with `n_leaves` leaves.
fn move_probs(cfg: &BartConfig, n_leaves: usize) -> (f64, f64, f64) {
    if n_leaves <= 1 {
        return (1.0, 0.0, 0.0);
    }
    let z = cfg.p_grow + cfg.p_prune + cfg.p_change;
    (cfg.p_grow / z, cfg.p_prune / z, cfg.p_change / z)
}

/// Log prior ratio of splitting a leaf at `depth` into two leaves.
fn grow_log_prior_ratio(cfg: &BartConfig, depth: u32) -> f64 {
    let ps = cfg.split_prob(depth);
    let pc = cfg.split_prob(depth + 1);
    ps.ln() + 2.0 * (1.0 - pc).ln() - (1.0 - ps).ln()
}

/// Metropolis-Hastings log ratio for growing `leaf` into children with the given
/// residual statistics. `n_leaves` and `n_prunable_after` describe the current
/// tree and the proposed tree.
#[allow(clippy::too_many_arguments)]
pub(crate) fn grow_log_ratio(
    cfg: &BartConfig,
    depth: u32,
    n_leaves: usize,
    n_prunable_after: usize,
    parent: LeafStats,
    left: LeafStats,
    right: LeafStats,
    sigma2: f64,
    tau2: f64,
) -> f64 {
    let (pg, _, _) = move_probs(cfg, n_leaves);
    let (_, pp_after, _) = move_probs(cfg, n_leaves + 1);
    let proposal = (pp_after / n_prunable_after as f64).ln() - (pg / n_leaves as f64).ln();
    let lik = leaf_log_lik(left, sigma2, tau2) + leaf_log_lik(right, sigma2, tau2) - leaf_log_lik(parent, sigma2, tau2);
    proposal + grow_log_prior_ratio(cfg, depth) + lik
}

/// Log ratio for pruning a node at `depth` whose children carry `left`/`right`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn prune_log_ratio(
    cfg: &BartConfig,
    depth: u32,
    n_leaves: usize,
    n_prunable: usize,
    left: LeafStats,
    right: LeafStats,
    sigma2: f64,
    tau2: f64,
) -> f64 {
    let merged = LeafStats { n: left.n + right.n, sum: left.sum + right.sum, sum_sq: left.sum_sq + right.sum_sq };
    let (pg_after, _, _) = move_probs(cfg, n_leaves - 1);
    let (_, pp, _) = move_probs(cfg, n_leaves);
    let proposal = (pg_after / (n_leaves - 1) as f64).ln() - (pp / n_prunable as f64).ln();
    let lik = leaf_log_lik(merged, sigma2, tau2) - leaf_log_lik(left, sigma2, tau2) - leaf_log_lik(right, sigma2, tau2);
    proposal - grow_log_prior_ratio(cfg, depth) + lik
}

/// Compact posterior draw: trees with leaf values plus the noise sd (internal units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BartDraw {
    trees: Vec<Tree>,
    sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BartState {
    draws: Vec<BartDraw>,
    /// `internal = (z - y_min) / y_range - 0.5`.
    y_min: f64,
    y_range: f64,
    pub acceptance_rate: f64,
}

struct Sampler<'a> {
    x: &'a Features,
    y: Vec<f64>,
    cuts: Vec<Vec<f64>>,
    cfg: &'a BartConfig,
    tau2: f64,
    nu_lambda: f64,
}

fn cutpoints(x: &Features, var: usize, max: usize) -> Vec<f64> {
    let mut v: Vec<f64> = x.rows().map(|r| r[var]).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let mids: Vec<f64> = v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    if mids.len() <= max {
        return mids;
    }
    (0..max).map(|i| mids[(i * mids.len()) / max]).collect()
}

impl Sampler<'_> {
    fn run_chain(&self, seed: u64) -> (Vec<BartDraw>, f64) {
        let cfg = self.cfg;
        let n = self.y.len();
        let m = cfg.trees;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trees = vec![Tree::stump(); m];
        let mut fits = vec![vec![0.0; n]; m];
        let mut total = vec![0.0; n];
        let mut sigma2 = self.nu_lambda / cfg.nu;
        let mut draws = Vec::new();
        let (mut proposed, mut accepted) = (0usize, 0usize);
        let mut resid = vec![0.0; n];
        let mut assign = vec![0usize; n];
        let iters = cfg.burn_in + cfg.draws * cfg.thin;
        for it in 0..iters {
            for j in 0..m {
                for i in 0..n {
                    resid[i] = self.y[i] - (total[i] - fits[j][i]);
                }
                let tree = &mut trees[j];
                for (i, a) in assign.iter_mut().enumerate() {
                    *a = tree.leaf_of(self.x.row(i));
                }
                proposed += 1;
                if self.propose(tree, &mut assign, &resid, sigma2, &mut rng) {
                    accepted += 1;
                }
                // leaf means from their conjugate full conditional
                let mut stats = vec![LeafStats::default(); tree.nodes.len()];
                for i in 0..n {
                    let s = &mut stats[assign[i]];
                    s.n += 1;
                    s.sum += resid[i];
                }
                for leaf in tree.leaves() {
                    let s = stats[leaf];
                    let prec = 1.0 / self.tau2 + s.n as f64 / sigma2;
                    let mean = (s.sum / sigma2) / prec;
                    let z: f64 = rng.sample(StandardNormal);
                    tree.nodes[leaf].value = mean + z / prec.sqrt();
                }
                for i in 0..n {
                    let v = tree.nodes[assign[i]].value;
                    total[i] += v - fits[j][i];
                    fits[j][i] = v;
                }
            }
            let sse: f64 = self.y.iter().zip(&total).map(|(y, f)| (y - f).powi(2)).sum();
            let shape = 0.5 * (cfg.nu + n as f64);
            let rate = 0.5 * (self.nu_lambda + sse);
            let g: f64 = Gamma::new(shape, 1.0 / rate).expect("valid gamma").sample(&mut rng);
            sigma2 = 1.0 / g;
            if it >= cfg.burn_in && (it - cfg.burn_in).is_multiple_of(cfg.thin) {
                draws.push(BartDraw { trees: trees.clone(), sigma: sigma2.sqrt() });
            }
        }
        (draws, accepted as f64 / proposed.max(1) as f64)
    }

    fn stats_of(&self, assign: &[usize], resid: &[f64], node: usize) -> Vec<usize> {
        (0..resid.len()).filter(|&i| assign[i] == node).collect()
    }

    fn split_stats(&self, members: &[usize], resid: &[f64], var: usize, cut: f64) -> (LeafStats, LeafStats) {
        let (mut l, mut r) = (LeafStats::default(), LeafStats::default());
        for &i in members {
            let s = if self.x.row(i)[var] < cut { &mut l } else { &mut r };
            s.n += 1;
            s.sum += resid[i];
            s.sum_sq += resid[i] * resid[i];
        }
        (l, r)
    }

    fn random_rule(&self, rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let var = rng.gen_range(0..self.cuts.len());
        let c = &self.cuts[var];
        if c.is_empty() {
            return None;
        }
        Some((var, c[rng.gen_range(0..c.len())]))
    }

    /// One grow/prune/change proposal; updates `tree` and `assign` on acceptance.
    fn propose(&self, tree: &mut Tree, assign: &mut [usize], resid: &[f64], sigma2: f64, rng: &mut ChaCha8Rng) -> bool {
        let cfg = self.cfg;
        let min = cfg.min_leaf_size.max(1);
        let leaves = tree.leaves();
        let (pg, pp, _) = move_probs(cfg, leaves.len());
        let u: f64 = rng.gen();
        if u < pg {
            let leaf = leaves[rng.gen_range(0..leaves.len())];
            let Some((var, cut)) = self.random_rule(rng) else { return false };
            let members = self.stats_of(assign, resid, leaf);
            let (l, r) = self.split_stats(&members, resid, var, cut);
            if l.n < min || r.n < min {
                return false;
            }
            let parent = LeafStats { n: l.n + r.n, sum: l.sum + r.sum, sum_sq: l.sum_sq + r.sum_sq };
            // prunable nodes after growing: the new node, minus its parent if that was prunable
            let mut n_prunable_after = tree.prunable().len() + 1;
            let par = tree.nodes[leaf].parent;
            if par != NONE {
                let (a, b) = tree.children(par);
                let sibling = if a == leaf { b } else { a };
                if tree.nodes[sibling].is_leaf() {
                    n_prunable_after -= 1;
                }
            }
            let lr = grow_log_ratio(cfg, tree.depth(leaf), leaves.len(), n_prunable_after, parent, l, r, sigma2, self.tau2);
            if rng.gen::<f64>().ln() < lr {
                let (li, ri) = tree.grow(leaf, var, cut);
                for &i in &members {
                    assign[i] = if self.x.row(i)[var] < cut { li } else { ri };
                }
                return true;
            }
            false
        } else if u < pg + pp {
            let prunable = tree.prunable();
            let node = prunable[rng.gen_range(0..prunable.len())];
            let (a, b) = tree.children(node);
            let la = self.stats_of(assign, resid, a);
            let lb = self.stats_of(assign, resid, b);
            let sa = LeafStats::from(&la.iter().map(|&i| resid[i]).collect::<Vec<_>>());
            let sb = LeafStats::from(&lb.iter().map(|&i| resid[i]).collect::<Vec<_>>());
            let lr = prune_log_ratio(cfg, tree.depth(node), leaves.len(), prunable.len(), sa, sb, sigma2, self.tau2);
            if rng.gen::<f64>().ln() < lr {
                tree.prune(node);
                for i in la.into_iter().chain(lb) {
                    assign[i] = node;
                }
                return true;
            }
            false
        } else {
            let prunable = tree.prunable();
            let node = prunable[rng.gen_range(0..prunable.len())];
            let Some((var, cut)) = self.random_rule(rng) else { return false };
            let (a, b) = tree.children(node);
            let members: Vec<usize> = (0..resid.len()).filter(|&i| assign[i] == a || assign[i] == b).collect();
            let (old_var, old_cut) = tree.split(node);
            let (ol, or) = self.split_stats(&members, resid, old_var, old_cut);
            let (nl, nr) = self.split_stats(&members, resid, var, cut);
            if nl.n < min || nr.n < min {
                return false;
            }
            let lr = leaf_log_lik(nl, sigma2, self.tau2) + leaf_log_lik(nr, sigma2, self.tau2)
                - leaf_log_lik(ol, sigma2, self.tau2)
                - leaf_log_lik(or, sigma2, self.tau2);
            if rng.gen::<f64>().ln() < lr {
                tree.nodes[node].var = var;
                tree.nodes[node].cut = cut;
                for &i in &members {
                    assign[i] = if self.x.row(i)[var] < cut { a } else { b };
                }
                return true;
            }
            false
        }
    }
}

fn chain_seed(seed: u64, chain: usize) -> u64 {
    // splitmix64 step
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(chain as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn fit(x: &Features, z: &[f64], cfg: &BartConfig, seed: u64) -> Result<BartState> {
    cfg.validate()?;
    let y_min = z.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y_range = if y_max > y_min { y_max - y_min } else { 1.0 };
    let y: Vec<f64> = z.iter().map(|v| (v - y_min) / y_range - 0.5).collect();
    let sd = crate::stats::std_dev(&y).max(1e-6);
    let chi = ChiSquared::new(cfg.nu).map_err(|e| Error::Config(e.to_string()))?;
    let lambda = sd * sd * chi.inverse_cdf(1.0 - cfg.q) / cfg.nu;
    let tau = 0.5 / (cfg.k * (cfg.trees as f64).sqrt());
    let sampler = Sampler {
        x,
        y,
        cuts: (0..x.p()).map(|v| cutpoints(x, v, cfg.max_cutpoints.max(1))).collect(),
        cfg,
        tau2: tau * tau,
        nu_lambda: cfg.nu * lambda,
    };
    let chains: Vec<(Vec<BartDraw>, f64)> =
        (0..cfg.chains).into_par_iter().map(|c| sampler.run_chain(chain_seed(seed, c))).collect();
    let acceptance_rate = chains.iter().map(|c| c.1).sum::<f64>() / chains.len() as f64;
    let draws = chains.into_iter().flat_map(|c| c.0).collect();
    Ok(BartState { draws, y_min, y_range, acceptance_rate })
}

impl BartState {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub(crate) fn conditional(&self, x: &[f64]) -> Conditional {
        let t = self.draws.len() as f64;
        let mut means = Vec::with_capacity(self.draws.len());
        let mut sds = Vec::with_capacity(self.draws.len());
        for d in &self.draws {
            let f: f64 = d.trees.iter().map(|tr| tr.predict(x)).sum();
            means.push((f + 0.5) * self.y_range + self.y_min);
            sds.push(d.sigma * self.y_range);
        }
        Conditional::Mixture { weights: vec![1.0 / t; means.len()], means, sds }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
        (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
    }

    // marginal likelihood by trapezoid quadrature over the leaf mean
    fn brute_leaf_lik(r: &[f64], sigma2: f64, tau2: f64) -> f64 {
        let (lo, hi, steps) = (-12.0 * tau2.sqrt(), 12.0 * tau2.sqrt(), 40_000);
        let h = (hi - lo) / steps as f64;
        (0..=steps)
            .map(|i| {
                let mu = lo + i as f64 * h;
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                w * normal_pdf(mu, 0.0, tau2) * r.iter().map(|v| normal_pdf(*v, mu, sigma2)).product::<f64>()
            })
            .sum::<f64>()
            * h
    }

    // tree prior by direct enumeration of internal/leaf nodes (rules cancel)
    fn brute_tree_prior(cfg: &BartConfig, tree: &Tree) -> f64 {
        tree.live()
            .map(|i| {
                let ps = cfg.alpha * (1.0 + tree.nodes[i].depth as f64).powf(-cfg.beta);
                if tree.nodes[i].is_leaf() {
                    1.0 - ps
                } else {
                    ps
                }
            })
            .product()
    }

    fn brute_tree_lik(tree: &Tree, xs: &[f64], r: &[f64], sigma2: f64, tau2: f64) -> f64 {
        tree.leaves()
            .iter()
            .map(|&l| {
                let rs: Vec<f64> = xs.iter().zip(r).filter(|(x, _)| tree.leaf_of(&[**x]) == l).map(|(_, v)| *v).collect();
                brute_leaf_lik(&rs, sigma2, tau2)
            })
            .product()
    }

    fn brute_move_prob(cfg: &BartConfig, tree: &Tree, grow: bool) -> f64 {
        let nl = tree.leaves().len();
        if nl == 1 {
            return if grow { 1.0 } else { 0.0 };
        }
        let z = cfg.p_grow + cfg.p_prune + cfg.p_change;
        if grow {
            cfg.p_grow / z
        } else {
            cfg.p_prune / z
        }
    }

    #[test]
    fn leaf_likelihood_matches_quadrature() {
        let r = [0.1, -0.05, 0.2, 0.12];
        let (s2, t2) = (0.04, 0.01);
        let exact = leaf_log_lik(LeafStats::from(&r), s2, t2);
        let brute = brute_leaf_lik(&r, s2, t2).ln();
        assert!((exact - brute).abs() < 1e-8, "{exact} vs {brute}");
    }

    #[test]
    fn grow_and_prune_ratios_match_brute_force() {
        let cfg = BartConfig::default();
        let xs: Vec<f64> = (0..12).map(|i| i as f64 / 12.0).collect();
        let r: Vec<f64> = xs.iter().map(|x| if *x < 0.5 { -0.1 } else { 0.15 } + 0.03 * (x * 40.0).sin()).collect();
        let (s2, t2) = (0.02, 0.005);
        let stats = |t: &Tree, node: usize| {
            let v: Vec<f64> = xs.iter().zip(&r).filter(|(x, _)| t.leaf_of(&[**x]) == node).map(|(_, v)| *v).collect();
            LeafStats::from(&v)
        };

        // trees with 1 -> 2 and 2 -> 3 leaves
        let t1 = Tree::stump();
        let mut t2_tree = t1.clone();
        let (_, right) = t2_tree.grow(0, 0, 0.5);
        let mut t3 = t2_tree.clone();
        t3.grow(right, 0, 0.75);

        for (before, after, leaf) in [(&t1, &t2_tree, 0usize), (&t2_tree, &t3, right)] {
            let (l, rr) = after.children(leaf);
            let parent = stats(before, leaf);
            let got = grow_log_ratio(
                &cfg,
                before.depth(leaf),
                before.leaves().len(),
                after.prunable().len(),
                parent,
                stats(after, l),
                stats(after, rr),
                s2,
                t2,
            );
            let posterior = (brute_tree_prior(&cfg, after) * brute_tree_lik(after, &xs, &r, s2, t2))
                / (brute_tree_prior(&cfg, before) * brute_tree_lik(before, &xs, &r, s2, t2));
            let q_fwd = brute_move_prob(&cfg, before, true) / before.leaves().len() as f64;
            let q_rev = brute_move_prob(&cfg, after, false) / after.prunable().len() as f64;
            let brute = (posterior * q_rev / q_fwd).ln();
            assert!((got - brute).abs() < 1e-6, "grow: {got} vs {brute}");

            let back = prune_log_ratio(
                &cfg,
                before.depth(leaf),
                after.leaves().len(),
                after.prunable().len(),
                stats(after, l),
                stats(after, rr),
                s2,
                t2,
            );
            assert!((back + brute).abs() < 1e-6, "prune: {back} vs {}", -brute);
        }
    }

    #[test]
    fn recovers_step_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| if *x < 0.5 { -1.0 } else { 1.0 } + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let st = fit(&Features::column(xs), &ys, &BartConfig { burn_in: 100, draws: 100, ..Default::default() }, 7)
            .unwrap();
        let (m_lo, _) = st.conditional(&[0.2]).moments();
        let (m_hi, sd_hi) = st.conditional(&[0.8]).moments();
        assert!((m_lo + 1.0).abs() < 0.1, "{m_lo}");
        assert!((m_hi - 1.0).abs() < 0.1, "{m_hi}");
        assert!(sd_hi < 0.3, "{sd_hi}");
        assert!(st.acceptance_rate > 0.0);
    }

    #[test]
    fn chains_merge_deterministically() {
        let xs: Vec<f64> = (0..60).map(|i| (i as f64 * 0.61).sin()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * 2.0).collect();
        let cfg = BartConfig { burn_in: 20, draws: 10, chains: 3, trees: 5, ..Default::default() };
        let a = fit(&Features::column(xs.clone()), &ys, &cfg, 1).unwrap();
        let b = fit(&Features::column(xs), &ys, &cfg, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_draws(), 30);
    }
}
