//! Small numeric helpers shared across modules.

use statrs::function::erf::{erf_inv, erfc};
use statrs::function::gamma::ln_gamma;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal log-density.
pub fn norm_ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// `sqrt(2) * erf^-1(2p - 1)`, the standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    SQRT_2 * erf_inv(2.0 * p - 1.0)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Linear-interpolation quantile of a sorted slice (type 7).
pub fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Smallest `s` with `cdf(s) >= t` for a non-decreasing `cdf`.
///
/// The bracket starts at `center +- scale` and doubles outward until it contains
/// the target, then bisection runs until the bracket is narrower than `tol`.
/// `t <= 0` returns the lower end of the expanded bracket.
pub fn invert_monotone(cdf: impl Fn(f64) -> f64, t: f64, center: f64, scale: f64, tol: f64) -> f64 {
    let scale = if scale.is_finite() && scale > 0.0 { scale } else { 1.0 };
    let mut width = scale;
    let mut lo = center - width;
    let mut hi = center + width;
    if t <= 0.0 {
        return center - 64.0 * scale;
    }
    for _ in 0..200 {
        if cdf(lo) < t {
            break;
        }
        width *= 2.0;
        lo = center - width;
    }
    width = scale;
    for _ in 0..200 {
        if cdf(hi) >= t {
            break;
        }
        width *= 2.0;
        hi = center + width;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) >= t {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Kolmogorov-Smirnov statistic of a sample against a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let above = (i as f64 + 1.0) / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS p-value with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let x = d * (sn + 0.12 + 0.11 / sn);
    if x < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        sum += if k as usize % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Pearson correlation; `None` when either vector has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 2 || n != b.len() {
        return None;
    }
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Log pmf of the beta-binomial distribution.
pub fn beta_binomial_ln_pmf(j: usize, m: usize, a: f64, b: f64) -> f64 {
    let (j, m) = (j as f64, m as f64);
    let ln_choose = ln_gamma(m + 1.0) - ln_gamma(j + 1.0) - ln_gamma(m - j + 1.0);
    let ln_beta = |x: f64, y: f64| ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y);
    ln_choose + ln_beta(j + a, m - j + b) - ln_beta(a, b)
}

/// Equal-tailed `level` interval of BetaBinomial(m, a, b), as counts.
pub fn beta_binomial_interval(m: usize, a: f64, b: f64, level: f64) -> (usize, usize) {
    let tail = 0.5 * (1.0 - level);
    let pmf: Vec<f64> = (0..=m).map(|j| beta_binomial_ln_pmf(j, m, a, b).exp()).collect();
    let mut acc = 0.0;
    let mut lo = 0;
    for (j, p) in pmf.iter().enumerate() {
        acc += p;
        if acc > tail {
            lo = j;
            break;
        }
    }
    acc = 0.0;
    let mut hi = m;
    for (j, p) in pmf.iter().enumerate().rev() {
        acc += p;
        if acc > tail {
            hi = j;
            break;
        }
    }
    (lo, hi)
}
