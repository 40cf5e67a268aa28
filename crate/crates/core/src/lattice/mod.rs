//! Potential theory of the killed nearest-neighbour walk on Z².
//!
//! The walk jumps to each neighbour at rate ¼ and dies at rate `N⁻²`, so the
//! total rate is `λ = 1 + N⁻²`. Its generator matrix `Q = λI − ¼A` is the
//! precision matrix of the massive free field and `G = Q⁻¹` its covariance.

mod banded;
mod multigrid;
pub mod plane;
mod potential;
pub mod spectral;
mod stencil;
pub mod tube;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use banded::BandedCholesky;
pub use multigrid::{Multigrid, PcgReport};
pub use plane::PlaneGreen;
pub use potential::*;
pub use stencil::Stencil;

/// A site of Z².
pub type Point = [i64; 2];

pub fn distance(a: Point, b: Point) -> f64 {
    let dx = (a[0] - b[0]) as f64;
    let dy = (a[1] - b[1]) as f64;
    dx.hypot(dy)
}

pub fn neighbours(p: Point) -> [Point; 4] {
    [[p[0] + 1, p[1]], [p[0] - 1, p[1]], [p[0], p[1] + 1], [p[0], p[1] - 1]]
}

/// Lattice points of the closed Euclidean ball `{p : |p − c| ≤ r}`.
pub fn ball(center: Point, r: f64) -> Vec<Point> {
    let reach = r.floor() as i64;
    let mut out = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            if ((dx * dx + dy * dy) as f64) <= r * r {
                out.push([center[0] + dx, center[1] + dy]);
            }
        }
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("mass scale N must be at least 1")]
    BadMassScale,
    #[error("point {0:?} lies outside the window")]
    OutsideWindow(Point),
    #[error("point {0:?} lies in the killing set")]
    InKillingSet(Point),
    #[error("target set and killing set overlap at {0:?}")]
    Overlap(Point),
    #[error("target set is empty")]
    EmptySet,
    #[error("level {0} outside (-1, 1)")]
    LevelOutOfRange(f64),
    #[error("window side {0} too small (need at least 4)")]
    WindowTooSmall(usize),
    #[error("solver stopped after {iterations} iterations with relative residual {residual:.3e}")]
    SolverFailed { iterations: usize, residual: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("infeasible geometry: {0}")]
    Infeasible(String),
}

/// The killed walk with mass scale `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkModel {
    mass_scale: u64,
}

impl WalkModel {
    pub fn new(mass_scale: u64) -> Result<Self, LatticeError> {
        if mass_scale == 0 {
            return Err(LatticeError::BadMassScale);
        }
        Ok(Self { mass_scale })
    }

    pub fn mass_scale(&self) -> u64 {
        self.mass_scale
    }

    pub fn edge_conductance(&self) -> f64 {
        0.25
    }

    pub fn killing_rate(&self) -> f64 {
        let n = self.mass_scale as f64;
        1.0 / (n * n)
    }

    pub fn total_rate(&self) -> f64 {
        self.killing_rate() + 4.0 * self.edge_conductance()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Sites outside the box are absorbing.
    Box,
    /// Periodic boundary.
    Torus,
}

/// A square finite piece of Z², addressed row-major from its lower-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub kind: WindowKind,
    pub side: usize,
    pub center: Point,
}

impl Window {
    pub fn new(kind: WindowKind, side: usize, center: Point) -> Result<Self, LatticeError> {
        if side < 4 {
            return Err(LatticeError::WindowTooSmall(side));
        }
        Ok(Self { kind, side, center })
    }

    pub fn boxed(side: usize) -> Result<Self, LatticeError> {
        Self::new(WindowKind::Box, side, [0, 0])
    }

    pub fn torus(side: usize) -> Result<Self, LatticeError> {
        Self::new(WindowKind::Torus, side, [0, 0])
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    pub fn is_periodic(&self) -> bool {
        self.kind == WindowKind::Torus
    }

    /// Lower-left corner.
    pub fn corner(&self) -> Point {
        let half = (self.side / 2) as i64;
        [self.center[0] - half, self.center[1] - half]
    }

    /// Row-major index; torus windows wrap every point.
    pub fn index(&self, p: Point) -> Option<usize> {
        let c = self.corner();
        let s = self.side as i64;
        let (mut x, mut y) = (p[0] - c[0], p[1] - c[1]);
        if self.is_periodic() {
            x = x.rem_euclid(s);
            y = y.rem_euclid(s);
        } else if x < 0 || y < 0 || x >= s || y >= s {
            return None;
        }
        Some(y as usize * self.side + x as usize)
    }

    pub fn index_or_err(&self, p: Point) -> Result<usize, LatticeError> {
        self.index(p).ok_or(LatticeError::OutsideWindow(p))
    }

    pub fn point(&self, index: usize) -> Point {
        let c = self.corner();
        [c[0] + (index % self.side) as i64, c[1] + (index / self.side) as i64]
    }

    pub fn contains(&self, p: Point) -> bool {
        self.is_periodic() || self.index(p).is_some()
    }

    /// Largest `r` such that the Euclidean ball of radius `r` about the
    /// centre stays inside the window without touching its edge.
    pub fn inner_radius(&self) -> i64 {
        (self.side / 2) as i64 - 1
    }
}
