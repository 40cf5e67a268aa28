//! Small statistical helpers for Monte Carlo checks.

use serde::{Deserialize, Serialize};

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Binomial proportion with its standard error.
pub fn proportion(hits: u64, n: u64) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Kolmogorov asymptotic critical coefficient at the 1% level.
pub const KS_COEFFICIENT_1PCT: f64 = 1.628;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsOutcome {
    pub statistic: f64,
    pub critical: f64,
    pub n: usize,
    pub m: usize,
    pub passed: bool,
}

/// Two-sample Kolmogorov–Smirnov test at the 1% level.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsOutcome {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut statistic: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        statistic = statistic.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let critical = KS_COEFFICIENT_1PCT * ((n + m) as f64 / (n * m) as f64).sqrt();
    KsOutcome { statistic, critical, n, m, passed: statistic <= critical }
}

/// Smallest `k` with `P(Binomial(n, p) ≤ k) ≥ 1 − alpha`.
pub fn binomial_upper_quantile(n: u64, p: f64, alpha: f64) -> u64 {
    let mut term = (1.0 - p).powf(n as f64);
    let mut cdf = term;
    let mut k = 0;
    while cdf < 1.0 - alpha && k < n {
        term *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
        k += 1;
        cdf += term;
    }
    k
}
