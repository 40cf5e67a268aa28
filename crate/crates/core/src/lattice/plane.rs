//! Green's function of the killed walk on all of Z², without truncation.
//!
//! Integrating the Fourier representation over one wave number in closed
//! form leaves
//!
//! `g(d₁, d₂) = (1/π) ∫₀^π cos(k d₁) r(k)^{|d₂|} / √(δ(1 + δ)) dk`
//!
//! with `δ = N⁻² + sin²(k/2)` and `r = exp(−2 asinh √δ)`. Taking `|d₂| ≥ |d₁|`
//! (the function is symmetric) keeps the integrand non-oscillatory enough
//! for adaptive quadrature.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{LatticeError, Point, WalkModel};
use crate::quadrature;

const TOLERANCE: f64 = 1e-13;

#[derive(Debug)]
pub struct PlaneGreen {
    model: WalkModel,
    cache: Mutex<HashMap<(u64, u64), f64>>,
}

impl PlaneGreen {
    pub fn new(model: WalkModel) -> Self {
        Self { model, cache: Mutex::new(HashMap::new()) }
    }

    pub fn model(&self) -> &WalkModel {
        &self.model
    }

    fn key(d: Point) -> (u64, u64) {
        let (a, b) = (d[0].unsigned_abs(), d[1].unsigned_abs());
        (a.min(b), a.max(b))
    }

    /// `g(0, d)` by quadrature, uncached.
    pub fn compute(&self, d: Point) -> f64 {
        let (along, across) = Self::key(d);
        let kappa = self.model.killing_rate();
        let integrand = |k: f64| {
            let delta = kappa + (0.5 * k).sin().powi(2);
            let decay = (-2.0 * across as f64 * delta.sqrt().asinh()).exp();
            (k * along as f64).cos() * decay / (delta * (1.0 + delta)).sqrt()
        };
        // Split where the peak of width ~1/N and the oscillation live.
        let width = kappa.sqrt().max(1.0 / (1.0 + across as f64));
        let mut edges = vec![0.0];
        let mut e = width;
        while e < PI {
            edges.push(e);
            e *= 2.0;
        }
        edges.push(PI);
        let total: f64 = edges
            .windows(2)
            .map(|w| quadrature::integrate(integrand, w[0], w[1], TOLERANCE / edges.len() as f64).value)
            .sum();
        total / PI
    }

    /// `g(x, y)`, memoized on the displacement up to lattice symmetries.
    pub fn at(&self, x: Point, y: Point) -> f64 {
        let d = [x[0] - y[0], x[1] - y[1]];
        let key = Self::key(d);
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return *v;
        }
        let v = self.compute(d);
        self.cache.lock().expect("cache lock").insert(key, v);
        v
    }

    /// Fills the cache for every displacement between points of `set`, in parallel.
    pub fn prefetch(&self, set: &[Point]) {
        let mut keys: Vec<(u64, u64)> = Vec::new();
        {
            let cache = self.cache.lock().expect("cache lock");
            let mut seen = std::collections::HashSet::new();
            for a in set {
                for b in set {
                    let k = Self::key([a[0] - b[0], a[1] - b[1]]);
                    if !cache.contains_key(&k) && seen.insert(k) {
                        keys.push(k);
                    }
                }
            }
        }
        let values: Vec<((u64, u64), f64)> =
            keys.par_iter().map(|&k| (k, self.compute([k.0 as i64, k.1 as i64]))).collect();
        self.cache.lock().expect("cache lock").extend(values);
    }

    /// Dense Green's matrix restricted to `set`.
    pub fn matrix(&self, set: &[Point]) -> DMatrix<f64> {
        self.prefetch(set);
        let n = set.len();
        DMatrix::from_fn(n, n, |i, j| self.at(set[i], set[j]))
    }

    /// Equilibrium measure of a finite set in Z² via `e = G_KK⁻¹ 1`.
    pub fn equilibrium_weights(&self, set: &[Point]) -> Result<Vec<f64>, LatticeError> {
        if set.is_empty() {
            return Err(LatticeError::EmptySet);
        }
        let g = self.matrix(set);
        let chol = g.cholesky().ok_or_else(|| LatticeError::Unsupported("Green's matrix not positive definite".into()))?;
        Ok(chol.solve(&DVector::from_element(set.len(), 1.0)).iter().copied().collect())
    }

    pub fn capacity(&self, set: &[Point]) -> Result<f64, LatticeError> {
        Ok(self.equilibrium_weights(set)?.iter().sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::spectral::TorusGreen;

    #[test]
    fn matches_large_torus() {
        // With side ≫ N the torus sum is the plane value up to e^{-side/N}.
        let model = WalkModel::new(4).unwrap();
        let torus = TorusGreen::new(&model, 128);
        let plane = PlaneGreen::new(model);
        for d in [[0, 0], [1, 0], [3, 2], [0, 7], [10, 1]] {
            let a = plane.at(d, [0, 0]);
            let b = torus.at(d, [0, 0]);
            assert!((a - b).abs() < 1e-11, "{d:?}: {a} vs {b}");
        }
    }

    #[test]
    fn symmetric_under_lattice_symmetries() {
        let plane = PlaneGreen::new(WalkModel::new(50).unwrap());
        let v = plane.compute([3, 11]);
        for d in [[11, 3], [-3, 11], [3, -11], [-11, -3]] {
            assert!((plane.compute(d) - v).abs() < 1e-13);
        }
    }
}
