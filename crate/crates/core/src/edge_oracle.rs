//! Independent check of the edge rule: split the edge into `m` series edges
//! of conductance `m·C`, so the field along it becomes a Gaussian bridge
//! observed at `m − 1` interior points, and compute the probability that all
//! of them are nonnegative.
//!
//! Discrete observation misses excursions between points, which biases the
//! probability upwards by `O(m^{-1/2})`. The limit is recovered by computing
//! the discrete probability exactly (transfer operator on a fine grid) at
//! three values of `m` and eliminating the `m^{-1/2}` and `m^{-1}` terms.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::percolation::open_edge_prob;
use crate::rng;

/// Grid points per bridge-step standard deviation in the transfer operator.
const GRID_PER_STEP_SD: f64 = 8.0;
/// Kernel truncation, in step standard deviations.
const KERNEL_REACH: f64 = 8.0;

fn gaussian(x: f64, variance: f64) -> f64 {
    (-x * x / (2.0 * variance)).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

/// Probability that the bridge from `u` to `v` of total variance
/// `1/conductance` is nonnegative at all `m − 1` interior points of a uniform
/// subdivision, by repeated Gaussian convolution on `[0, X]`.
pub fn discrete_positivity(u: f64, v: f64, conductance: f64, m: usize) -> f64 {
    assert!(m >= 2 && u >= 0.0 && v >= 0.0 && conductance > 0.0);
    let total = 1.0 / conductance;
    let step = total / m as f64;
    let h = step.sqrt() / GRID_PER_STEP_SD;
    let top = u.max(v) + 8.0 * total.sqrt();
    let n = (top / h) as usize + 1;
    let reach = (KERNEL_REACH * GRID_PER_STEP_SD) as isize;
    let kernel: Vec<f64> = (-reach..=reach).map(|k| h * gaussian(k as f64 * h, step)).collect();
    // Trapezoid weights on [0, X]: half weight at the barrier.
    let weight = |i: usize| if i == 0 { 0.5 } else { 1.0 };

    let mut density: Vec<f64> = (0..n).map(|i| gaussian(i as f64 * h - u, step)).collect();
    let mut next = vec![0.0; n];
    for _ in 0..m - 2 {
        for (i, out) in next.iter_mut().enumerate() {
            let lo = (i as isize - reach).max(0) as usize;
            let hi = ((i as isize + reach) as usize).min(n - 1);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += weight(j) * density[j] * kernel[(j as isize - i as isize + reach) as usize];
            }
            *out = acc;
        }
        std::mem::swap(&mut density, &mut next);
    }
    let joint: f64 = (0..n).map(|i| weight(i) * h * density[i] * gaussian(i as f64 * h - v, step)).sum();
    joint / gaussian(u - v, total)
}

/// Continuum limit from `p(m) = p + a m^{-1/2} + b m^{-1}` at three `m`.
pub fn extrapolate(samples: &[(usize, f64); 3]) -> f64 {
    let rows: Vec<[f64; 4]> =
        samples.iter().map(|&(m, p)| [1.0, (m as f64).powf(-0.5), 1.0 / m as f64, p]).collect();
    let a = nalgebra::Matrix3::from_fn(|i, j| rows[i][j]);
    let b = nalgebra::Vector3::from_fn(|i, _| rows[i][3]);
    a.lu().solve(&b).expect("distinct subdivisions")[0]
}

/// Monte Carlo estimate of the discrete positivity probability, sampling the
/// bridge point by point and stopping at the first negative value.
pub fn bridge_positivity_mc(u: f64, v: f64, conductance: f64, m: usize, samples: u64, seed: u64) -> (f64, f64) {
    const CHUNK: u64 = 4096;
    let total = 1.0 / conductance;
    let step = total / m as f64;
    let chunks = samples.div_ceil(CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, c);
            let count = CHUNK.min(samples - c * CHUNK);
            (0..count)
                .filter(|_| {
                    let mut x = u;
                    for i in 1..m {
                        let left = total - (i - 1) as f64 * step;
                        let z: f64 = rng.sample(StandardNormal);
                        x += (v - x) * step / left + (step * (left - step) / left).sqrt() * z;
                        if x < 0.0 {
                            return false;
                        }
                    }
                    true
                })
                .count() as u64
        })
        .sum();
    let p = hits as f64 / samples as f64;
    (p, (p * (1.0 - p) / samples as f64).sqrt())
}

/// Subdivisions used for the extrapolation.
pub const SUBDIVISIONS: [usize; 3] = [256, 1024, 4096];

/// Outcome of the subdivision check at one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRuleCheck {
    pub u: f64,
    pub v: f64,
    pub conductance: f64,
    pub formula: f64,
    /// Exact discrete probabilities `(m, p(m))`.
    pub discrete: Vec<(usize, f64)>,
    pub limit: f64,
    pub relative_error: f64,
    /// Constant `c` with `1 − exp(−c·u·v)` equal to the limit (the rule uses `2C`).
    pub fitted_constant: f64,
    pub mc_subdivision: usize,
    pub mc_estimate: f64,
    pub mc_stderr: f64,
    /// `(MC − p(m)) / stderr` at the Monte Carlo subdivision.
    pub mc_z: f64,
}

pub fn check_edge_rule(u: f64, v: f64, conductance: f64, mc_samples: u64, seed: u64) -> EdgeRuleCheck {
    let discrete: Vec<(usize, f64)> =
        SUBDIVISIONS.par_iter().map(|&m| (m, discrete_positivity(u, v, conductance, m))).collect();
    let limit = extrapolate(&[discrete[0], discrete[1], discrete[2]]);
    let formula = open_edge_prob(u, v, conductance);
    let mc_subdivision = 1024;
    let (mc_estimate, mc_stderr) = bridge_positivity_mc(u, v, conductance, mc_subdivision, mc_samples, seed);
    let exact_at_mc = discrete[1].1;
    EdgeRuleCheck {
        u,
        v,
        conductance,
        formula,
        limit,
        relative_error: (limit - formula).abs() / formula,
        fitted_constant: -(1.0 - limit).ln() / (u * v),
        discrete,
        mc_subdivision,
        mc_estimate,
        mc_stderr,
        mc_z: (mc_estimate - exact_at_mc) / mc_stderr,
    }
}
