//! Conjugate gradients preconditioned by an aggregation multigrid V-cycle.
//!
//! Levels are built by 2×2 Galerkin aggregation down to a few hundred
//! unknowns, which are solved densely. The cycle uses a forward Gauss–Seidel
//! pre-smoother and the backward sweep as post-smoother, so the
//! preconditioner is symmetric and CG applies.

use nalgebra::{DMatrix, DVector};

use super::stencil::Stencil;
use super::LatticeError;

const COARSEST: usize = 256;
// Over-correction of the piecewise-constant coarse-grid update.
const COARSE_WEIGHT: f64 = 1.6;

struct Level {
    op: Stencil,
    /// Aggregate of each site of this level on the next coarser level.
    aggregate: Vec<usize>,
}

pub struct Multigrid {
    levels: Vec<Level>,
    coarsest: Stencil,
    coarsest_free: Vec<usize>,
    coarsest_factor: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

/// Outcome of a preconditioned CG solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgReport {
    pub iterations: usize,
    /// `‖b − Ax‖ / ‖b‖`, recomputed from scratch at the end.
    pub rel_residual: f64,
}

impl Multigrid {
    pub fn new(op: Stencil) -> Self {
        let mut levels = Vec::new();
        let mut current = op;
        while current.len() > COARSEST && current.nx >= 4 && current.ny >= 4 {
            let (coarse, aggregate) = current.coarsen();
            levels.push(Level { op: current, aggregate });
            current = coarse;
        }
        let coarsest_free: Vec<usize> = (0..current.len()).filter(|&i| current.free[i]).collect();
        let m = coarsest_free.len();
        let coarsest_factor = (m > 0).then(|| {
            let mut position = vec![usize::MAX; current.len()];
            for (k, &i) in coarsest_free.iter().enumerate() {
                position[i] = k;
            }
            let mut dense = DMatrix::zeros(m, m);
            for (k, &i) in coarsest_free.iter().enumerate() {
                for (j, v) in current.row(i) {
                    if position[j] != usize::MAX {
                        dense[(k, position[j])] += v;
                    }
                }
            }
            dense.cholesky().expect("coarse operator is positive definite")
        });
        Self { levels, coarsest: current, coarsest_free, coarsest_factor }
    }

    pub fn fine(&self) -> &Stencil {
        self.levels.first().map(|l| &l.op).unwrap_or(&self.coarsest)
    }

    pub fn depth(&self) -> usize {
        self.levels.len() + 1
    }

    fn solve_coarsest(&self, b: &[f64], x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = 0.0);
        if let Some(factor) = &self.coarsest_factor {
            let rhs = DVector::from_iterator(self.coarsest_free.len(), self.coarsest_free.iter().map(|&i| b[i]));
            let sol = factor.solve(&rhs);
            for (k, &i) in self.coarsest_free.iter().enumerate() {
                x[i] = sol[k];
            }
        }
        for i in 0..self.coarsest.len() {
            if !self.coarsest.free[i] {
                x[i] = b[i];
            }
        }
    }

    fn cycle(&self, depth: usize, b: &[f64], x: &mut [f64]) {
        if depth == self.levels.len() {
            self.solve_coarsest(b, x);
            return;
        }
        let level = &self.levels[depth];
        let op = &level.op;
        x.iter_mut().for_each(|v| *v = 0.0);
        op.gauss_seidel(x, b, true);
        let mut residual = vec![0.0; op.len()];
        op.apply(x, &mut residual);
        let coarse_len = if depth + 1 < self.levels.len() { self.levels[depth + 1].op.len() } else { self.coarsest.len() };
        let mut coarse_b = vec![0.0; coarse_len];
        for i in 0..op.len() {
            if op.free[i] {
                coarse_b[level.aggregate[i]] += b[i] - residual[i];
            }
        }
        let mut coarse_x = vec![0.0; coarse_len];
        self.cycle(depth + 1, &coarse_b, &mut coarse_x);
        for i in 0..op.len() {
            if op.free[i] {
                x[i] += COARSE_WEIGHT * coarse_x[level.aggregate[i]];
            }
        }
        op.gauss_seidel(x, b, false);
    }

    /// Applies one V-cycle as an approximate inverse.
    pub fn precondition(&self, r: &[f64], z: &mut [f64]) {
        self.cycle(0, r, z);
    }

    /// Solves `A x = b` to relative residual `tol`, starting from `x`.
    pub fn solve(&self, b: &[f64], x: &mut [f64], tol: f64, max_iterations: usize) -> Result<PcgReport, LatticeError> {
        let op = self.fine();
        let n = op.len();
        let b_norm = norm(b);
        if b_norm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok(PcgReport { iterations: 0, rel_residual: 0.0 });
        }
        let mut r = vec![0.0; n];
        op.apply(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let mut z = vec![0.0; n];
        self.precondition(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        let mut iterations = 0;
        while norm(&r) / b_norm > tol && iterations < max_iterations {
            iterations += 1;
            op.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            self.precondition(&r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        op.apply(x, &mut r);
        let rel_residual = norm(&b.iter().zip(&r).map(|(bi, ri)| bi - ri).collect::<Vec<_>>()) / b_norm;
        if rel_residual > tol * 10.0 {
            return Err(LatticeError::SolverFailed { iterations, residual: rel_residual });
        }
        Ok(PcgReport { iterations, rel_residual })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{WalkModel, Window, WindowKind};

    #[test]
    fn converges_on_box_and_torus() {
        for kind in [WindowKind::Box, WindowKind::Torus] {
            let model = WalkModel::new(64).unwrap();
            let w = Window::new(kind, 96, [0, 0]).unwrap();
            let mut pinned = vec![false; w.len()];
            pinned[w.index([5, 5]).unwrap()] = true;
            let mg = Multigrid::new(Stencil::walk(&model, &w, &pinned));
            assert!(mg.depth() > 2);
            let mut b = vec![0.0; w.len()];
            b[w.index([0, 0]).unwrap()] = 1.0;
            let mut x = vec![0.0; w.len()];
            let report = mg.solve(&b, &mut x, 1e-12, 200).unwrap();
            assert!(report.rel_residual <= 1e-11, "{report:?}");
            assert!(report.iterations < 60, "{kind:?} {report:?}");
            assert_eq!(x[w.index([5, 5]).unwrap()], 0.0);
        }
    }
}
