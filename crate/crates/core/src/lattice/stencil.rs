//! Symmetric five-point operators on rectangular grids.

use super::{Window, WalkModel};

/// A symmetric five-point operator on an `nx × ny` grid, row-major.
///
/// `east[i]` couples site `i` to its right neighbour and `north[i]` to the
/// one above; on a periodic grid the last column (row) couples to the first.
/// Pinned sites carry an identity row and no couplings.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub nx: usize,
    pub ny: usize,
    pub periodic: bool,
    pub diag: Vec<f64>,
    pub east: Vec<f64>,
    pub north: Vec<f64>,
    pub free: Vec<bool>,
}

impl Stencil {
    /// `Q = λI − ¼A` on the window, with `pinned` sites held at zero.
    pub fn walk(model: &WalkModel, window: &Window, pinned: &[bool]) -> Self {
        let n = window.side;
        assert_eq!(pinned.len(), n * n);
        let periodic = window.is_periodic();
        let c = -model.edge_conductance();
        let mut diag = vec![model.total_rate(); n * n];
        let mut east = vec![0.0; n * n];
        let mut north = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let i = y * n + x;
                if pinned[i] {
                    diag[i] = 1.0;
                    continue;
                }
                if x + 1 < n || periodic {
                    let e = y * n + (x + 1) % n;
                    if !pinned[e] {
                        east[i] = c;
                    }
                }
                if y + 1 < n || periodic {
                    let up = ((y + 1) % n) * n + x;
                    if !pinned[up] {
                        north[i] = c;
                    }
                }
            }
        }
        Self { nx: n, ny: n, periodic, diag, east, north, free: pinned.iter().map(|p| !p).collect() }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn west_of(&self, x: usize, y: usize) -> Option<usize> {
        if x > 0 {
            Some(y * self.nx + x - 1)
        } else if self.periodic {
            Some(y * self.nx + self.nx - 1)
        } else {
            None
        }
    }

    #[inline]
    fn south_of(&self, x: usize, y: usize) -> Option<usize> {
        if y > 0 {
            Some((y - 1) * self.nx + x)
        } else if self.periodic {
            Some((self.ny - 1) * self.nx + x)
        } else {
            None
        }
    }

    #[inline]
    fn east_of(&self, x: usize, y: usize) -> usize {
        y * self.nx + (x + 1) % self.nx
    }

    #[inline]
    fn north_of(&self, x: usize, y: usize) -> usize {
        ((y + 1) % self.ny) * self.nx + x
    }

    /// Off-diagonal part of row `(x, y)` applied to `v`.
    #[inline]
    fn off_diagonal(&self, x: usize, y: usize, v: &[f64]) -> f64 {
        let i = y * self.nx + x;
        let mut s = 0.0;
        if self.east[i] != 0.0 {
            s += self.east[i] * v[self.east_of(x, y)];
        }
        if self.north[i] != 0.0 {
            s += self.north[i] * v[self.north_of(x, y)];
        }
        if let Some(w) = self.west_of(x, y) {
            s += self.east[w] * v[w];
        }
        if let Some(so) = self.south_of(x, y) {
            s += self.north[so] * v[so];
        }
        s
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for y in 0..self.ny {
            for x in 0..self.nx {
                let i = y * self.nx + x;
                out[i] = self.diag[i] * v[i] + self.off_diagonal(x, y, v);
            }
        }
    }

    /// One forward (or backward) Gauss–Seidel sweep for `self · v = b`.
    pub fn gauss_seidel(&self, v: &mut [f64], b: &[f64], forward: bool) {
        let sweep = |this: &Self, v: &mut [f64], x: usize, y: usize| {
            let i = y * this.nx + x;
            v[i] = (b[i] - this.off_diagonal(x, y, v)) / this.diag[i];
        };
        if forward {
            for y in 0..self.ny {
                for x in 0..self.nx {
                    sweep(self, v, x, y);
                }
            }
        } else {
            for y in (0..self.ny).rev() {
                for x in (0..self.nx).rev() {
                    sweep(self, v, x, y);
                }
            }
        }
    }

    /// Entries of row `i` as `(column, value)` pairs, diagonal first.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        let (x, y) = (i % self.nx, i / self.nx);
        let mut out = vec![(i, self.diag[i])];
        let mut push = |j: usize, v: f64| {
            if v == 0.0 {
                return;
            }
            if let Some(e) = out.iter_mut().find(|e| e.0 == j) {
                e.1 += v;
            } else {
                out.push((j, v));
            }
        };
        push(self.east_of(x, y), if x + 1 < self.nx || self.periodic { self.east[i] } else { 0.0 });
        push(self.north_of(x, y), if y + 1 < self.ny || self.periodic { self.north[i] } else { 0.0 });
        if let Some(w) = self.west_of(x, y) {
            push(w, self.east[w]);
        }
        if let Some(s) = self.south_of(x, y) {
            push(s, self.north[s]);
        }
        out
    }

    /// Galerkin coarsening by 2×2 aggregation of free sites.
    pub fn coarsen(&self) -> (Stencil, Vec<usize>) {
        let cx = self.nx.div_ceil(2);
        let cy = self.ny.div_ceil(2);
        let mut coarse = Stencil {
            nx: cx,
            ny: cy,
            periodic: self.periodic,
            diag: vec![0.0; cx * cy],
            east: vec![0.0; cx * cy],
            north: vec![0.0; cx * cy],
            free: vec![false; cx * cy],
        };
        let aggregate: Vec<usize> = (0..self.len()).map(|i| (i / self.nx / 2) * cx + (i % self.nx) / 2).collect();
        for y in 0..self.ny {
            for x in 0..self.nx {
                let i = y * self.nx + x;
                if !self.free[i] {
                    continue;
                }
                let a = aggregate[i];
                coarse.free[a] = true;
                coarse.diag[a] += self.diag[i];
                if self.east[i] != 0.0 && (x + 1 < self.nx || self.periodic) {
                    let b = aggregate[self.east_of(x, y)];
                    if a == b {
                        coarse.diag[a] += 2.0 * self.east[i];
                    } else {
                        coarse.east[a] += self.east[i];
                    }
                }
                if self.north[i] != 0.0 && (y + 1 < self.ny || self.periodic) {
                    let b = aggregate[self.north_of(x, y)];
                    if a == b {
                        coarse.diag[a] += 2.0 * self.north[i];
                    } else {
                        coarse.north[a] += self.north[i];
                    }
                }
            }
        }
        for a in 0..coarse.len() {
            if !coarse.free[a] {
                coarse.diag[a] = 1.0;
            }
        }
        (coarse, aggregate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::WindowKind;

    fn dense(s: &Stencil) -> Vec<Vec<f64>> {
        let n = s.len();
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in s.row(i) {
                row[j] += v;
            }
        }
        m
    }

    #[test]
    fn walk_operator_is_symmetric() {
        let model = WalkModel::new(4).unwrap();
        for kind in [WindowKind::Box, WindowKind::Torus] {
            let w = Window::new(kind, 6, [0, 0]).unwrap();
            let mut pinned = vec![false; 36];
            pinned[7] = true;
            let s = Stencil::walk(&model, &w, &pinned);
            let m = dense(&s);
            for i in 0..36 {
                for j in 0..36 {
                    assert_eq!(m[i][j], m[j][i]);
                }
            }
            let v: Vec<f64> = (0..36).map(|i| (i as f64).sin()).collect();
            let mut out = vec![0.0; 36];
            s.apply(&v, &mut out);
            for i in 0..36 {
                let expect: f64 = (0..36).map(|j| m[i][j] * v[j]).sum();
                assert!((expect - out[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn coarse_operator_is_galerkin_product() {
        let model = WalkModel::new(3).unwrap();
        for kind in [WindowKind::Box, WindowKind::Torus] {
            let w = Window::new(kind, 6, [0, 0]).unwrap();
            let mut pinned = vec![false; 36];
            pinned[0] = true;
            pinned[14] = true;
            let fine = Stencil::walk(&model, &w, &pinned);
            let (coarse, agg) = fine.coarsen();
            let a = dense(&fine);
            let c = dense(&coarse);
            for i in 0..coarse.len() {
                for j in 0..coarse.len() {
                    if !(coarse.free[i] && coarse.free[j]) {
                        continue;
                    }
                    let mut expect = 0.0;
                    for p in 0..36 {
                        for q in 0..36 {
                            if fine.free[p] && fine.free[q] && agg[p] == i && agg[q] == j {
                                expect += a[p][q];
                            }
                        }
                    }
                    assert!((expect - c[i][j]).abs() < 1e-14, "{kind:?} ({i},{j})");
                }
            }
        }
    }
}
