//! Modified Bessel functions of the second kind, orders 0 and 1.
//!
//! `K₀` is the kernel of the continuum capacity problem and sets the
//! large-distance asymptotics of the massive lattice Green's function.
//! Small arguments use the ascending series around the logarithmic
//! singularity, moderate ones Steed's continued fraction, and large ones the
//! Hankel asymptotic expansion truncated at its smallest term. Every branch
//! carries an absolute error bound.

use std::f64::consts::PI;

use thiserror::Error;

use crate::quadrature;

/// Absolute accuracy guaranteed by [`k0`] and [`k1`].
pub const TOLERANCE: f64 = 1e-10;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Above this argument the continued fraction replaces the series.
const SERIES_MAX: f64 = 2.0;
/// Above this argument the asymptotic expansion is exact to rounding.
const ASYMPTOTIC_MIN: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BesselError {
    #[error("Bessel K argument must be finite and positive, got {0}")]
    Domain(f64),
}

/// A function value together with a bound on its absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselEval {
    pub value: f64,
    pub abs_error_bound: f64,
}

fn check(s: f64) -> Result<(), BesselError> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(BesselError::Domain(s))
    }
}

/// `K₀(s)` for `s > 0`.
pub fn k0(s: f64) -> Result<BesselEval, BesselError> {
    check(s)?;
    Ok(if s <= SERIES_MAX {
        k0_series(s)
    } else if s <= ASYMPTOTIC_MIN {
        steed(s).0
    } else {
        asymptotic(0.0, s)
    })
}

/// `K₁(s) = −K₀′(s)` for `s > 0`.
pub fn k1(s: f64) -> Result<BesselEval, BesselError> {
    check(s)?;
    Ok(if s <= SERIES_MAX {
        k1_series(s)
    } else if s <= ASYMPTOTIC_MIN {
        steed(s).1
    } else {
        asymptotic(1.0, s)
    })
}

/// Infallible `K₀` for callers that have already validated the argument.
///
/// Panics on a non-positive argument.
pub fn k0_value(s: f64) -> f64 {
    match k0(s) {
        Ok(e) => e.value,
        Err(e) => panic!("{e}"),
    }
}

// K₀(x) = −(ln(x/2) + γ) I₀(x) + Σ_{k≥1} H_k (x²/4)^k / (k!)²
fn k0_series(x: f64) -> BesselEval {
    let q = 0.25 * x * x;
    let log_term = (0.5 * x).ln() + EULER_GAMMA;
    let mut term = 1.0; // (x²/4)^k / (k!)²
    let mut harmonic = 0.0;
    let mut i0 = 1.0;
    let mut tail = 0.0;
    let mut magnitude = log_term.abs() + 1.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= q / (kf * kf);
        harmonic += 1.0 / kf;
        i0 += term;
        tail += harmonic * term;
        magnitude += term * (log_term.abs() + harmonic);
        if term * (harmonic + log_term.abs() + 1.0) < 1e-17 * magnitude.max(1.0) {
            break;
        }
    }
    let value = -log_term * i0 + tail;
    BesselEval { value, abs_error_bound: 8.0 * f64::EPSILON * magnitude }
}

// K₁(x) = 1/x + ln(x/2) I₁(x) − (x/4) Σ_{k≥0} (H_k + H_{k+1} − 2γ) (x²/4)^k / (k!(k+1)!)
fn k1_series(x: f64) -> BesselEval {
    let q = 0.25 * x * x;
    let log_half = (0.5 * x).ln();
    let mut term = 1.0; // (x²/4)^k / (k!(k+1)!)
    let mut h_k = 0.0;
    let mut h_k1 = 1.0;
    let mut i1_sum = 1.0;
    let mut psi_sum = h_k + h_k1 - 2.0 * EULER_GAMMA;
    let mut magnitude = 1.0 / x + psi_sum.abs();
    for k in 1..200 {
        let kf = k as f64;
        term *= q / (kf * (kf + 1.0));
        h_k += 1.0 / kf;
        h_k1 += 1.0 / (kf + 1.0);
        i1_sum += term;
        let weight = h_k + h_k1 - 2.0 * EULER_GAMMA;
        psi_sum += weight * term;
        magnitude += term * (weight.abs() + log_half.abs());
        if term * (weight.abs() + log_half.abs() + 1.0) < 1e-17 * magnitude.max(1.0) {
            break;
        }
    }
    let i1 = 0.5 * x * i1_sum;
    let value = 1.0 / x + log_half * i1 - 0.25 * x * psi_sum;
    let magnitude = 1.0 / x + (log_half * i1).abs() + 0.25 * x * magnitude;
    BesselEval { value, abs_error_bound: 8.0 * f64::EPSILON * magnitude }
}

// Steed's continued fraction for K₀ and K₁ together (Temme's CF2 at ν = 0).
fn steed(x: f64) -> (BesselEval, BesselEval) {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let (mut q1, mut q2) = (0.0, 1.0);
    let a1 = 0.25;
    let (mut q, mut c, mut a) = (a1, a1, -a1);
    let mut s = 1.0 + q * delh;
    for i in 2..10_000 {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    let k0 = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k1 = k0 * (x + 0.5 - a1 * h) / x;
    let eval = |value: f64| BesselEval { value, abs_error_bound: 64.0 * f64::EPSILON * value };
    (eval(k0), eval(k1))
}

// K_ν(x) ~ sqrt(π/2x) e^{−x} Σ_k a_k(ν) / x^k, truncated before the smallest term.
fn asymptotic(nu: f64, x: f64) -> BesselEval {
    let mu = 4.0 * nu * nu;
    let prefactor = (PI / (2.0 * x)).sqrt() * (-x).exp();
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..200 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        let next = term * (mu - odd * odd) / (kf * 8.0 * x);
        if next.abs() >= last {
            break;
        }
        last = next.abs();
        term = next;
        sum += term;
    }
    BesselEval {
        value: prefactor * sum,
        abs_error_bound: prefactor * (last + 4.0 * f64::EPSILON * sum.abs()),
    }
}

/// `K₀(s)` straight from its integral representation
/// `∫₀^∞ (2t)⁻¹ exp(−s²/4t − t) dt`, via the substitution `t = e^v`.
///
/// Slow; used to validate the fast branches and wherever the integral form
/// itself is the object of interest.
pub fn k0_by_quadrature(s: f64, tol: f64) -> Result<f64, BesselError> {
    check(s)?;
    let c = 0.25 * s * s;
    let (lo, hi) = log_window(c);
    Ok(quadrature::integrate(|v| 0.5 * (-c * (-v).exp() - v.exp()).exp(), lo, hi, tol).value)
}

/// `K₁(s) = (s/4) ∫₀^∞ t⁻² exp(−s²/4t − t) dt`, by quadrature.
pub fn k1_by_quadrature(s: f64, tol: f64) -> Result<f64, BesselError> {
    check(s)?;
    let c = 0.25 * s * s;
    let (lo, hi) = log_window(c);
    let q = quadrature::integrate(|v| (-v - c * (-v).exp() - v.exp()).exp(), lo, hi, tol / (0.25 * s));
    Ok(0.25 * s * q.value)
}

// Range of v = ln t outside which the integrand is below e^{-60}.
fn log_window(c: f64) -> (f64, f64) {
    // c e^{-v} ≥ 60 when v ≤ ln(c/60); e^{v} ≥ 60 when v ≥ ln 60.
    let lo = (c / 60.0).ln().min(-2.0) - 4.0;
    let hi = 60f64.ln() + 1.0;
    (lo, hi.max(lo + 1.0))
}
