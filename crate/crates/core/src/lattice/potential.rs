//! Green's functions, hitting probabilities, equilibrium measures and
//! capacities on a finite window.

use serde::{Deserialize, Serialize};

use super::banded::BandedCholesky;
use super::multigrid::{norm, Multigrid};
use super::spectral::TorusGreen;
use super::stencil::Stencil;
use super::{neighbours, LatticeError, Point, WalkModel, Window};

/// Largest box side factored directly; larger windows use multigrid CG.
pub const DIRECT_MAX_SIDE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    #[default]
    Auto,
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub rel_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { method: SolverMethod::Auto, rel_tol: 1e-12, max_iterations: 2000 }
    }
}

/// A vector over the window with the quality of the solve that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: Vec<f64>,
    /// `‖b − Qx‖ / ‖b‖` over the free sites.
    pub rel_residual: f64,
    pub iterations: usize,
}

enum Backend {
    Direct { op: Stencil, factor: BandedCholesky },
    Iterative(Multigrid),
}

/// `Q` restricted to the non-pinned sites of a window, ready to solve.
pub struct DirichletSolver {
    window: Window,
    backend: Backend,
    config: SolverConfig,
}

impl DirichletSolver {
    pub fn new(model: &WalkModel, window: &Window, pinned: &[bool], config: SolverConfig) -> Result<Self, LatticeError> {
        let op = Stencil::walk(model, window, pinned);
        let direct = match config.method {
            SolverMethod::Direct => true,
            SolverMethod::Iterative => false,
            SolverMethod::Auto => !window.is_periodic() && window.side <= DIRECT_MAX_SIDE,
        };
        let backend = if direct {
            let factor = BandedCholesky::factor(&op)?;
            Backend::Direct { op, factor }
        } else {
            Backend::Iterative(Multigrid::new(op))
        };
        Ok(Self { window: *window, backend, config })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn operator(&self) -> &Stencil {
        match &self.backend {
            Backend::Direct { op, .. } => op,
            Backend::Iterative(mg) => mg.fine(),
        }
    }

    pub fn is_pinned(&self, index: usize) -> bool {
        !self.operator().free[index]
    }

    /// Solves `Q x = rhs`; pinned entries of `rhs` must be zero.
    pub fn solve(&self, rhs: &[f64]) -> Result<Solution, LatticeError> {
        match &self.backend {
            Backend::Direct { op, factor } => {
                let mut x = rhs.to_vec();
                factor.solve(&mut x);
                let rel_residual = residual(op, &x, rhs);
                Ok(Solution { values: x, rel_residual, iterations: 1 })
            }
            Backend::Iterative(mg) => {
                let mut x = vec![0.0; rhs.len()];
                let report = mg.solve(rhs, &mut x, self.config.rel_tol, self.config.max_iterations)?;
                Ok(Solution { values: x, rel_residual: report.rel_residual, iterations: report.iterations })
            }
        }
    }
}

fn residual(op: &Stencil, x: &[f64], b: &[f64]) -> f64 {
    let mut ax = vec![0.0; x.len()];
    op.apply(x, &mut ax);
    let r: Vec<f64> = ax.iter().zip(b).map(|(a, b)| b - a).collect();
    let bn = norm(b);
    if bn == 0.0 {
        norm(&r)
    } else {
        norm(&r) / bn
    }
}

/// Deduplicated window indices of `set` (torus points are wrapped).
pub fn indices_of(window: &Window, set: &[Point]) -> Result<Vec<usize>, LatticeError> {
    let mut seen = vec![false; window.len()];
    let mut out = Vec::with_capacity(set.len());
    for &p in set {
        let i = window.index_or_err(p)?;
        if !seen[i] {
            seen[i] = true;
            out.push(i);
        }
    }
    Ok(out)
}

pub fn mask_of(window: &Window, set: &[Point]) -> Result<Vec<bool>, LatticeError> {
    let mut mask = vec![false; window.len()];
    for i in indices_of(window, set)? {
        mask[i] = true;
    }
    Ok(mask)
}

/// Window indices of the in-window neighbours of site `i`.
pub fn window_neighbours(window: &Window, i: usize) -> impl Iterator<Item = usize> + '_ {
    neighbours(window.point(i)).into_iter().filter_map(move |q| window.index(q))
}

/// `g(x, y) = Q⁻¹(x, y)` on the window.
pub fn green(model: &WalkModel, window: &Window, x: Point, y: Point) -> Result<f64, LatticeError> {
    green_killed(model, window, &[], x, y)
}

/// The column `g_U(·, y)` over the window, for the walk also killed on `killing`.
pub fn green_column(
    model: &WalkModel,
    window: &Window,
    killing: &[Point],
    y: Point,
    config: SolverConfig,
) -> Result<Solution, LatticeError> {
    let iy = window.index_or_err(y)?;
    let pinned = mask_of(window, killing)?;
    if pinned[iy] {
        return Err(LatticeError::InKillingSet(y));
    }
    if window.is_periodic() && killing.is_empty() && config.method == SolverMethod::Auto {
        let table = TorusGreen::for_window(model, window);
        let values = (0..window.len()).map(|i| table.at(window.point(i), y)).collect();
        return Ok(Solution { values, rel_residual: 0.0, iterations: 0 });
    }
    let solver = DirichletSolver::new(model, window, &pinned, config)?;
    let mut rhs = vec![0.0; window.len()];
    rhs[iy] = 1.0;
    solver.solve(&rhs)
}

/// `g_U(x, y)`: Green's function of the walk killed on `killing`.
pub fn green_killed(
    model: &WalkModel,
    window: &Window,
    killing: &[Point],
    x: Point,
    y: Point,
) -> Result<f64, LatticeError> {
    let ix = window.index_or_err(x)?;
    if mask_of(window, killing)?[ix] {
        return Err(LatticeError::InKillingSet(x));
    }
    Ok(green_column(model, window, killing, y, SolverConfig::default())?.values[ix])
}

fn check_disjoint(window: &Window, target: &[Point], killing: &[Point]) -> Result<(Vec<usize>, Vec<bool>), LatticeError> {
    let k = indices_of(window, target)?;
    if k.is_empty() {
        return Err(LatticeError::EmptySet);
    }
    let u = mask_of(window, killing)?;
    if let Some(&i) = k.iter().find(|&&i| u[i]) {
        return Err(LatticeError::Overlap(window.point(i)));
    }
    Ok((k, u))
}

/// `h(x) = P_x(walk reaches K before U and before dying)`, as a vector over the window.
pub fn hitting_probability(
    model: &WalkModel,
    window: &Window,
    target: &[Point],
    killing: &[Point],
) -> Result<Solution, LatticeError> {
    hitting_probability_with(model, window, target, killing, SolverConfig::default())
}

pub fn hitting_probability_with(
    model: &WalkModel,
    window: &Window,
    target: &[Point],
    killing: &[Point],
    config: SolverConfig,
) -> Result<Solution, LatticeError> {
    let (k, mut pinned) = check_disjoint(window, target, killing)?;
    let in_target = mask_of(window, target)?;
    for &i in &k {
        pinned[i] = true;
    }
    let c = model.edge_conductance();
    let mut rhs = vec![0.0; window.len()];
    for &i in &k {
        for j in window_neighbours(window, i) {
            if !pinned[j] {
                rhs[j] += c;
            }
        }
    }
    let solver = DirichletSolver::new(model, window, &pinned, config)?;
    let mut solution = solver.solve(&rhs)?;
    for (i, v) in solution.values.iter_mut().enumerate() {
        if in_target[i] {
            *v = 1.0;
        }
    }
    Ok(solution)
}

/// Equilibrium measure of `K`, optionally for the walk also killed on `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumMeasure {
    pub support: Vec<Point>,
    pub weights: Vec<f64>,
    pub cap: f64,
    pub killing_set: Option<Vec<Point>>,
    /// Relative residual of the underlying Dirichlet solve.
    pub residual: f64,
}

impl EquilibriumMeasure {
    pub fn normalized(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / self.cap).collect()
    }
}

/// `e_K(x) = λ − ¼ Σ_{y∼x} h(y)` for `x ∈ K`: the rate of leaving `x` and
/// never coming back to `K` before absorption.
pub fn equilibrium_from_hitting(model: &WalkModel, window: &Window, k: &[usize], h: &[f64]) -> Vec<f64> {
    let c = model.edge_conductance();
    k.iter()
        .map(|&i| {
            let returning: f64 = window_neighbours(window, i).map(|j| h[j]).sum();
            model.total_rate() - c * returning
        })
        .collect()
}

pub fn equilibrium_measure(
    model: &WalkModel,
    window: &Window,
    target: &[Point],
    killing: &[Point],
) -> Result<EquilibriumMeasure, LatticeError> {
    equilibrium_measure_with(model, window, target, killing, SolverConfig::default())
}

pub fn equilibrium_measure_with(
    model: &WalkModel,
    window: &Window,
    target: &[Point],
    killing: &[Point],
    config: SolverConfig,
) -> Result<EquilibriumMeasure, LatticeError> {
    let h = hitting_probability_with(model, window, target, killing, config)?;
    let k = indices_of(window, target)?;
    let weights = equilibrium_from_hitting(model, window, &k, &h.values);
    Ok(EquilibriumMeasure {
        support: k.iter().map(|&i| window.point(i)).collect(),
        cap: weights.iter().sum(),
        weights,
        killing_set: (!killing.is_empty()).then(|| killing.to_vec()),
        residual: h.rel_residual,
    })
}

pub fn capacity(model: &WalkModel, window: &Window, target: &[Point], killing: &[Point]) -> Result<f64, LatticeError> {
    Ok(equilibrium_measure(model, window, target, killing)?.cap)
}

/// `ξ = N e^{−a² g_N}` and `ā = a √g_N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationScale {
    pub a: f64,
    pub mass_scale: u64,
    pub g_n: f64,
    pub xi: f64,
    pub abar: f64,
}

impl CorrelationScale {
    pub fn from_green(a: f64, mass_scale: u64, g_n: f64) -> Result<Self, LatticeError> {
        if !(a > -1.0 && a < 1.0) {
            return Err(LatticeError::LevelOutOfRange(a));
        }
        let xi = mass_scale as f64 * (-a * a * g_n).exp();
        Ok(Self { a, mass_scale, g_n, xi, abar: a * g_n.sqrt() })
    }

    /// `ξ` rounded to the nearest lattice scale, at least 1.
    pub fn xi_rounded(&self) -> u64 {
        (self.xi.round() as u64).max(1)
    }
}

pub fn correlation_scale(a: f64, model: &WalkModel, window: &Window) -> Result<CorrelationScale, LatticeError> {
    if !(a > -1.0 && a < 1.0) {
        return Err(LatticeError::LevelOutOfRange(a));
    }
    let g_n = green(model, window, window.center, window.center)?;
    CorrelationScale::from_green(a, model.mass_scale(), g_n)
}
