//! Energy-minimizing probability measures on the unit segment for the
//! kernel `(2/π) K₀(2|s − t|)`, and the resulting capacity of `[0,1]`.
//!
//! The segment is split into `n` equal cells; a measure is a weight vector on
//! the cell midpoints. Off-diagonal kernel entries are point values, diagonal
//! entries are the exact average of the kernel over the cell pair (the
//! logarithmic singularity is integrable). The quadratic form is Toeplitz, so
//! matrix-vector products go through a circulant FFT embedding.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{bessel, quadrature};

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("need at least 2 cells, got {0}")]
    TooFewCells(usize),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("minimizer did not converge after {} iterations (gap {residual:.3e})", best.iterations)]
    NotConverged { best: Box<SegmentDiscretization>, residual: f64 },
}

/// Discretized minimizer of the segment energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDiscretization {
    pub n: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub energy: f64,
    pub cap: f64,
    pub tau: f64,
    pub iterations: usize,
    /// Frank–Wolfe duality gap; bounds `energy − min energy`.
    pub residual: f64,
}

impl SegmentDiscretization {
    /// Indices of interior cells whose weight vanished.
    pub fn zero_weights(&self) -> Vec<usize> {
        self.weights.iter().enumerate().filter(|(_, &w)| w <= 0.0).map(|(i, _)| i).collect()
    }
}

/// The kernel `(2/π) K₀(2d)` for `d > 0`.
pub fn kernel(d: f64) -> f64 {
    2.0 / PI * bessel::k0_value(2.0 * d)
}

/// `(1/h²) ∫∫_{[0,h]²} kernel(|s − t|) ds dt = (2/h²) ∫₀ʰ (h − d) kernel(d) dd`.
pub fn cell_self_average(h: f64) -> f64 {
    let q = quadrature::integrate(|d| (h - d) * kernel(d), 0.0, h, 1e-15 * h * h);
    2.0 * q.value / (h * h)
}

/// Symmetric Toeplitz energy matrix on `n` cells, held as its first row.
#[derive(Clone)]
pub struct SegmentKernel {
    n: usize,
    row: Vec<f64>,
    spectrum: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SegmentKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SegmentKernel").field("n", &self.n).finish()
    }
}

impl SegmentKernel {
    pub fn new(n: usize) -> Result<Self, SegmentError> {
        if n < 2 {
            return Err(SegmentError::TooFewCells(n));
        }
        let h = 1.0 / n as f64;
        let mut row = Vec::with_capacity(n);
        row.push(cell_self_average(h));
        row.extend((1..n).map(|m| kernel(m as f64 * h)));

        let size = 2 * n;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let mut spectrum = vec![Complex64::new(0.0, 0.0); size];
        for m in 0..n {
            spectrum[m].re = row[m];
            if m > 0 {
                spectrum[size - m].re = row[m];
            }
        }
        forward.process(&mut spectrum);
        Ok(Self { n, row, spectrum, forward, inverse })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// First row of the matrix: entry `m` couples cells `|i − j| = m`.
    pub fn row(&self) -> &[f64] {
        &self.row
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.row[i.abs_diff(j)]
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let size = 2 * self.n;
        let mut buf = vec![Complex64::new(0.0, 0.0); size];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / size as f64;
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    }

    pub fn energy(&self, w: &[f64]) -> f64 {
        let mut aw = vec![0.0; self.n];
        self.apply(w, &mut aw);
        dot(w, &aw)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn validate(weights: &[f64], n: usize) -> Result<(), SegmentError> {
    if weights.len() != n {
        return Err(SegmentError::InvalidWeights(format!("expected {n} weights, got {}", weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(SegmentError::InvalidWeights(format!("weight {w} is negative or not finite")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(SegmentError::InvalidWeights(format!("weights sum to {total}")));
    }
    Ok(())
}

/// Energy of a probability vector on the `n`-cell grid.
pub fn segment_energy(weights: &[f64], n: usize) -> Result<f64, SegmentError> {
    validate(weights, n)?;
    Ok(SegmentKernel::new(n)?.energy(weights))
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            shift = candidate;
        }
    }
    v.iter().map(|&x| (x - shift).max(0.0)).collect()
}

fn largest_eigenvalue(kernel: &SegmentKernel) -> f64 {
    let n = kernel.n();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let mut y = vec![0.0; n];
    let mut estimate = 0.0;
    for _ in 0..60 {
        let norm = dot(&x, &x).sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
        kernel.apply(&x, &mut y);
        estimate = dot(&x, &y);
        std::mem::swap(&mut x, &mut y);
    }
    estimate
}

/// Minimizes the energy over probability vectors on the `n`-cell grid by
/// accelerated projected gradient with adaptive restart. Terminates once the
/// Frank–Wolfe gap `2(wᵀAw − min_i (Aw)_i)` drops below `tol`.
pub fn minimize_segment(n: usize, tol: f64) -> Result<SegmentDiscretization, SegmentError> {
    const MAX_ITERATIONS: usize = 200_000;
    if !(tol > 0.0) {
        return Err(SegmentError::BadTolerance(tol));
    }
    let kernel = SegmentKernel::new(n)?;
    // Gradient of wᵀAw is 2Aw with Lipschitz constant 2λ_max; the power
    // iteration underestimates λ_max slightly, hence the margin.
    let step = 1.0 / (2.0 * largest_eigenvalue(&kernel) * 1.05);

    let mut w = vec![1.0 / n as f64; n];
    let mut y = w.clone();
    let mut momentum: f64 = 1.0;
    let mut aw = vec![0.0; n];
    let mut ay = vec![0.0; n];
    kernel.apply(&w, &mut aw);
    let mut energy = dot(&w, &aw);
    let mut gap = f64::INFINITY;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        gap = 2.0 * (energy - aw.iter().copied().fold(f64::INFINITY, f64::min));
        if gap <= tol {
            break;
        }
        iterations += 1;
        kernel.apply(&y, &mut ay);
        let trial: Vec<f64> = y.iter().zip(&ay).map(|(v, g)| v - step * 2.0 * g).collect();
        let next = project_simplex(&trial);
        // Gradient-based restart: drop momentum when it points uphill.
        let uphill: f64 = (0..n).map(|i| (y[i] - next[i]) * (next[i] - w[i])).sum();
        let t_next = if uphill > 0.0 { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) };
        let beta = if uphill > 0.0 { 0.0 } else { (momentum - 1.0) / t_next };
        for i in 0..n {
            y[i] = next[i] + beta * (next[i] - w[i]);
        }
        momentum = t_next;
        w = next;
        kernel.apply(&w, &mut aw);
        energy = dot(&w, &aw);
    }

    let h = 1.0 / n as f64;
    let result = SegmentDiscretization {
        n,
        nodes: (0..n).map(|i| (i as f64 + 0.5) * h).collect(),
        weights: w,
        energy,
        cap: 1.0 / energy,
        tau: 1.0 / energy / 2.0,
        iterations,
        residual: gap,
    };
    if gap > tol {
        return Err(SegmentError::NotConverged { best: Box::new(result), residual: gap });
    }
    Ok(result)
}

/// Capacities across a refinement sequence with a Richardson extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub grids: Vec<usize>,
    pub caps: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Observed order `p` in `cap(n) ≈ cap_∞ + c n^{−p}` from the three finest grids.
    pub order: f64,
    pub extrapolated: f64,
    /// `|extrapolated − cap(finest)|`.
    pub error_bar: f64,
}

impl ConvergenceStudy {
    pub fn finest_cap(&self) -> f64 {
        *self.caps.last().expect("non-empty study")
    }

    /// Largest gap between successive refinements, over the last two grids.
    pub fn last_increment(&self) -> f64 {
        let k = self.caps.len();
        (self.caps[k - 1] - self.caps[k - 2]).abs()
    }
}

pub const REFERENCE_GRIDS: [usize; 4] = [500, 1000, 2000, 4000];
pub const REFERENCE_TOLERANCE: f64 = 1e-13;

/// Runs [`minimize_segment`] on each grid (doubling sizes expected).
pub fn convergence_study(grids: &[usize], tol: f64) -> Result<ConvergenceStudy, SegmentError> {
    assert!(grids.len() >= 3, "need at least three grids");
    let mut caps = Vec::new();
    let mut residuals = Vec::new();
    for &n in grids {
        let r = minimize_segment(n, tol)?;
        caps.push(r.cap);
        residuals.push(r.residual);
    }
    let k = caps.len();
    let (c1, c2, c3) = (caps[k - 3], caps[k - 2], caps[k - 1]);
    let ratio_grid = grids[k - 1] as f64 / grids[k - 2] as f64;
    let d1 = c2 - c1;
    let d2 = c3 - c2;
    let (order, extrapolated) = if d1 != 0.0 && d2 != 0.0 && d1.signum() == d2.signum() && d2.abs() < d1.abs() {
        let order = (d1 / d2).ln() / ratio_grid.ln();
        let factor = ratio_grid.powf(order);
        (order, c3 + d2 / (factor - 1.0))
    } else {
        (f64::NAN, c3)
    };
    Ok(ConvergenceStudy {
        grids: grids.to_vec(),
        caps,
        residuals,
        order,
        extrapolated,
        error_bar: (extrapolated - c3).abs(),
    })
}

static REFERENCE: OnceLock<ConvergenceStudy> = OnceLock::new();

/// The convergence study on [`REFERENCE_GRIDS`], computed once per process.
pub fn reference_study() -> &'static ConvergenceStudy {
    REFERENCE.get_or_init(|| {
        convergence_study(&REFERENCE_GRIDS, REFERENCE_TOLERANCE).expect("reference segment minimization converges")
    })
}

/// Capacity of `[0,1]` from the finest reference grid.
pub fn cap_reference() -> f64 {
    reference_study().finest_cap()
}

/// `τ = cap/2` from the finest reference grid.
pub fn tau_reference() -> f64 {
    cap_reference() / 2.0
}
