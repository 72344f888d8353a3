//! Small statistics toolkit: correlations, an exact rank-trend test, and the
//! Kolmogorov–Smirnov goodness-of-fit test.

use crate::error::{Error, Result};

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("{} vs {} samples", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::EmptyInput("correlation needs at least two samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1 with ties sharing their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// One-sided test for an increasing trend of `y` along increasing `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendTest {
    pub rho: f64,
    /// `P(rho' >= rho)` under exchangeability of `y`.
    pub p_value: f64,
    pub exact: bool,
}

/// Exact permutation p-value for up to 9 points, normal approximation above.
pub fn spearman_trend(x: &[f64], y: &[f64]) -> Result<TrendTest> {
    let rho = spearman(x, y)?;
    let n = y.len();
    if n <= 9 {
        let rx = ranks(x);
        let ry = ranks(y);
        let mut perm: Vec<usize> = (0..n).collect();
        let (mut hits, mut total) = (0u64, 0u64);
        let tol = 1e-12;
        permute(&mut perm, 0, &mut |p| {
            let shuffled: Vec<f64> = p.iter().map(|&i| ry[i]).collect();
            let r = pearson(&rx, &shuffled).unwrap_or(0.0);
            total += 1;
            if r >= rho - tol {
                hits += 1;
            }
        });
        Ok(TrendTest {
            rho,
            p_value: hits as f64 / total as f64,
            exact: true,
        })
    } else {
        let z = rho * ((n - 1) as f64).sqrt();
        Ok(TrendTest {
            rho,
            p_value: 0.5 * libm::erfc(z / std::f64::consts::SQRT_2),
            exact: false,
        })
    }
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

pub fn normal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * libm::erfc(-(x - mu) / (sigma * std::f64::consts::SQRT_2))
}

/// `sup |F_n - F|` of a sample against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

/// Asymptotic Kolmogorov p-value with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}
