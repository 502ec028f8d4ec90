//! Deterministic reductions and small statistical helpers.

use statrs::distribution::{ContinuousCDF, Normal};

/// Pairwise summation in a fixed order; the result depends only on the slice.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if x.len() <= LEAF {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(x) / x.len() as f64
}

/// Sample mean and its standard error (`s / sqrt(n)`, unbiased `s`).
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let m = mean(x);
    if n < 2 {
        return (m, f64::NAN);
    }
    let dev: Vec<f64> = x.iter().map(|v| (v - m) * (v - m)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Two-sided Kolmogorov-Smirnov distance between the empirical law of `x`
/// and a continuous CDF.
pub fn ks_statistic(x: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &xi) in v.iter().enumerate() {
        let f = cdf(xi);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

/// KS distance to `N(0, variance)`.
pub fn ks_normal(x: &[f64], variance: f64) -> f64 {
    match Normal::new(0.0, variance.sqrt()) {
        Ok(n) => ks_statistic(x, |t| n.cdf(t)),
        Err(_) => f64::NAN,
    }
}

/// Asymptotic 1% critical value of the one-sample KS test.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

/// `sum_{k > n} k^{-s}` for `s > 1`, via Euler-Maclaurin at a cutoff of at
/// least 64 (error far below `1e-15` relative).
pub fn zeta_tail(s: f64, n: u64) -> f64 {
    assert!(s > 1.0, "zeta tail needs s > 1");
    let m = n.max(64);
    let direct: f64 = (n + 1..=m).map(|k| (k as f64).powf(-s)).sum();
    let x = m as f64;
    // sum_{k > m} f(k) = int_m^inf f - f(m)/2 - f'(m)/12 + f'''(m)/720 - f^(5)(m)/30240
    let f = x.powf(-s);
    let integral = x.powf(1.0 - s) / (s - 1.0);
    let d1 = -s * f / x;
    let d3 = -s * (s + 1.0) * (s + 2.0) * f / x.powi(3);
    let d5 = -s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * f / x.powi(5);
    direct + integral - f / 2.0 - d1 / 12.0 + d3 / 720.0 - d5 / 30240.0
}
