//! Random interlacements of the killed walk, seen from an anchor set `B`.
//!
//! Trajectories that visit `B` form a Poisson cloud of mean `u·cap(B)`. Each
//! one enters `B` at a site drawn from the normalized equilibrium measure;
//! from there the forward part is the killed walk and the backward part is the
//! walk conditioned to die (or leave a box window) before returning to `B`.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gff::{FieldSampler, GffError, SamplingMethod};
use crate::lattice::{
    equilibrium_from_hitting, hitting_probability, indices_of, EquilibriumMeasure, LatticeError, Point, WalkModel,
    Window,
};
use crate::rng;
use crate::stats::{ks_two_sample, KsOutcome};

#[derive(Debug, Error)]
pub enum InterlacementError {
    #[error("level u must be positive, got {0}")]
    BadLevel(f64),
    #[error("ball of radius {radius} about {center:?} leaves the window")]
    Geometry { center: Point, radius: f64 },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Sampling(#[from] GffError),
}

/// One trajectory, in time order. `path[entry]` is the site where it first
/// enters the anchor set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub label: f64,
    pub path: Vec<Point>,
    /// Holding time at each step of `path`.
    pub holding: Vec<f64>,
    pub entry: usize,
    /// Whether the backward and forward ends died by killing (as opposed to
    /// leaving a box window).
    pub killed: [bool; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterlacementSample {
    pub level_u: f64,
    pub window: Window,
    pub anchor_set: Vec<Point>,
    pub trajectories: Vec<Trajectory>,
}

impl InterlacementSample {
    /// The sample at a lower level `u ≤ level_u`: trajectories with label ≤ `u`.
    pub fn at_level(&self, u: f64) -> Self {
        Self {
            level_u: u,
            window: self.window,
            anchor_set: self.anchor_set.clone(),
            trajectories: self.trajectories.iter().filter(|t| t.label <= u).cloned().collect(),
        }
    }

    /// Total holding time per window site (row-major).
    pub fn occupation(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.window.len()];
        for t in &self.trajectories {
            for (p, h) in t.path.iter().zip(&t.holding) {
                out[self.window.index(*p).expect("path inside window")] += h;
            }
        }
        out
    }

    pub fn occupation_at(&self, p: Point) -> f64 {
        self.trajectories
            .iter()
            .flat_map(|t| t.path.iter().zip(&t.holding))
            .filter(|(q, _)| **q == p)
            .map(|(_, h)| h)
            .sum()
    }

    /// The set of visited sites.
    pub fn visited(&self) -> HashSet<Point> {
        self.trajectories.iter().flat_map(|t| t.path.iter().copied()).collect()
    }

    pub fn hits(&self, set: &[Point]) -> bool {
        let set: HashSet<Point> = set.iter().copied().collect();
        self.trajectories.iter().any(|t| t.path.iter().any(|p| set.contains(p)))
    }

    /// Edges crossed by some trajectory, as `(lower endpoint, direction)` with
    /// direction 0 for `+x` and 1 for `+y`, in window coordinates.
    pub fn traversed_edges(&self) -> HashSet<(Point, u8)> {
        let mut edges = HashSet::new();
        for t in &self.trajectories {
            for w in t.path.windows(2) {
                edges.insert(edge_key(&self.window, w[0], w[1]));
            }
        }
        edges
    }
}

fn step(p: Point, dir: usize) -> Point {
    match dir {
        0 => [p[0] + 1, p[1]],
        1 => [p[0] - 1, p[1]],
        2 => [p[0], p[1] + 1],
        _ => [p[0], p[1] - 1],
    }
}

/// Canonical representative of a window site.
fn canonical(window: &Window, p: Point) -> Option<Point> {
    window.index(p).map(|i| window.point(i))
}

fn edge_key(window: &Window, a: Point, b: Point) -> (Point, u8) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    match (dx, dy) {
        (1, 0) => (a, 0),
        (-1, 0) => (b, 0),
        (0, 1) => (a, 1),
        (0, -1) => (b, 1),
        // A wrapped step on a torus: the lower endpoint is the one that
        // reaches the other by a unit step forward.
        _ => {
            let fwd = |p: Point, d: usize| canonical(window, step(p, d));
            if fwd(a, 0) == Some(b) {
                (a, 0)
            } else if fwd(b, 0) == Some(a) {
                (b, 0)
            } else if fwd(a, 2) == Some(b) {
                (a, 1)
            } else {
                (b, 1)
            }
        }
    }
}

/// Precomputed data for sampling interlacements through an anchor set.
pub struct InterlacementSpace {
    model: WalkModel,
    window: Window,
    anchor: Vec<Point>,
    in_anchor: Vec<bool>,
    /// `P_x(die or leave the window before reaching the anchor)`, zero on it.
    escape: Vec<f64>,
    equilibrium: EquilibriumMeasure,
    entrance: WeightedIndex<f64>,
}

impl InterlacementSpace {
    pub fn new(model: &WalkModel, window: &Window, anchor: &[Point]) -> Result<Self, InterlacementError> {
        let idx = indices_of(window, anchor)?;
        let mut in_anchor = vec![false; window.len()];
        for &i in &idx {
            in_anchor[i] = true;
        }
        let (hit, residual) = if in_anchor.iter().all(|&b| b) {
            (vec![1.0; window.len()], 0.0)
        } else {
            let s = hitting_probability(model, window, anchor, &[])?;
            (s.values, s.rel_residual)
        };
        let weights = equilibrium_from_hitting(model, window, &idx, &hit);
        let equilibrium = EquilibriumMeasure {
            support: idx.iter().map(|&i| window.point(i)).collect(),
            cap: weights.iter().sum(),
            weights,
            killing_set: None,
            residual,
        };
        let entrance = WeightedIndex::new(&equilibrium.weights)
            .map_err(|e| LatticeError::Unsupported(format!("equilibrium measure: {e}")))?;
        let escape = hit.iter().zip(&in_anchor).map(|(h, &a)| if a { 0.0 } else { (1.0 - h).max(0.0) }).collect();
        Ok(Self {
            model: *model,
            window: *window,
            anchor: equilibrium.support.clone(),
            in_anchor,
            escape,
            equilibrium,
            entrance,
        })
    }

    /// The whole window as anchor set.
    pub fn whole_window(model: &WalkModel, window: &Window) -> Result<Self, InterlacementError> {
        let all: Vec<Point> = (0..window.len()).map(|i| window.point(i)).collect();
        Self::new(model, window, &all)
    }

    pub fn capacity(&self) -> f64 {
        self.equilibrium.cap
    }

    pub fn equilibrium(&self) -> &EquilibriumMeasure {
        &self.equilibrium
    }

    fn escape_at(&self, p: Point) -> f64 {
        match self.window.index(p) {
            Some(i) => self.escape[i],
            None => 1.0,
        }
    }

    /// First step of the backward part from `x ∈ B`: weights for the four
    /// neighbours followed by death. Leaving a box window counts as escaping.
    pub fn backward_kernel(&self, x: Point) -> [f64; 5] {
        let c = self.model.edge_conductance();
        let mut w = [0.0; 5];
        for (d, slot) in w.iter_mut().take(4).enumerate() {
            *slot = c * self.escape_at(step(x, d));
        }
        w[4] = self.model.killing_rate();
        let total: f64 = w.iter().sum();
        w.map(|v| v / total)
    }

    /// Killed walk from `start`. With `conditioned`, the Doob transform that
    /// avoids the anchor set. Returns the path (excluding `start`) and whether
    /// it ended by killing.
    fn walk(&self, start: Point, conditioned: bool, rng: &mut impl Rng, path: &mut Vec<Point>) -> bool {
        let c = self.model.edge_conductance();
        let kill = self.model.killing_rate();
        let mut p = start;
        loop {
            let next = if conditioned {
                let w = self.backward_kernel(p);
                let mut r: f64 = rng.random();
                let mut choice = 4;
                for (d, &wd) in w.iter().enumerate().take(4) {
                    if r < wd {
                        choice = d;
                        break;
                    }
                    r -= wd;
                }
                if choice == 4 {
                    return true;
                }
                step(p, choice)
            } else {
                let r: f64 = rng.random::<f64>() * (kill + 4.0 * c);
                if r < kill {
                    return true;
                }
                step(p, (((r - kill) / c) as usize).min(3))
            };
            match canonical(&self.window, next) {
                Some(q) => {
                    path.push(q);
                    p = q;
                }
                None => return false,
            }
            debug_assert!(!conditioned || !self.in_anchor[self.window.index(p).expect("inside")]);
        }
    }

    /// Interlacement at level `u` restricted to trajectories visiting the anchor.
    pub fn sample(&self, u: f64, seed: u64, index: u64) -> Result<InterlacementSample, InterlacementError> {
        if !(u > 0.0 && u.is_finite()) {
            return Err(InterlacementError::BadLevel(u));
        }
        let mut rng = rng::stream(seed, index);
        let count = Poisson::new(u * self.capacity()).map(|d| d.sample(&mut rng) as usize).unwrap_or(0);
        let holding = Exp::new(self.model.total_rate()).expect("positive rate");
        let mut trajectories = Vec::with_capacity(count);
        for _ in 0..count {
            let label = rng.random::<f64>() * u;
            let start = self.anchor[self.entrance.sample(&mut rng)];
            let mut back = Vec::new();
            let back_killed = self.walk(start, true, &mut rng, &mut back);
            let mut path: Vec<Point> = back.into_iter().rev().collect();
            let entry = path.len();
            path.push(start);
            let fwd_killed = self.walk(start, false, &mut rng, &mut path);
            let times = (0..path.len()).map(|_| holding.sample(&mut rng)).collect();
            trajectories.push(Trajectory { label, path, holding: times, entry, killed: [back_killed, fwd_killed] });
        }
        Ok(InterlacementSample { level_u: u, window: self.window, anchor_set: self.anchor.clone(), trajectories })
    }
}

/// Interlacement at level `u` through the whole window.
pub fn sample_interlacement(
    model: &WalkModel,
    window: &Window,
    u: f64,
    seed: u64,
) -> Result<InterlacementSample, InterlacementError> {
    InterlacementSpace::whole_window(model, window)?.sample(u, seed, 0)
}

/// Default `λ(N, R)`: `c` when `2R ≥ N`, else `max((N/R)·exp(−log(N/R)/c), 2)`.
pub fn loc_uniq_lambda(mass_scale: u64, radius: f64, c: f64) -> f64 {
    let n = mass_scale as f64;
    if 2.0 * radius >= n {
        c
    } else {
        let ratio = n / radius;
        (ratio * (-ratio.ln() / c).exp()).max(2.0)
    }
}

/// Whether all visited sites in `B(x, R)` are joined by traversed edges with
/// both endpoints in `B(x, λR)`.
pub fn loc_uniq(sample: &InterlacementSample, x: Point, radius: f64, lambda: f64) -> Result<bool, InterlacementError> {
    let outer = lambda * radius;
    let window = &sample.window;
    let fits = if window.is_periodic() {
        outer < window.inner_radius() as f64
    } else {
        let half = (window.side / 2) as f64;
        let c = window.center;
        let (dx, dy) = ((x[0] - c[0]).abs() as f64, (x[1] - c[1]).abs() as f64);
        dx + outer < half && dy + outer < half
    };
    if !fits || radius < 0.0 || lambda < 1.0 {
        return Err(InterlacementError::Geometry { center: x, radius: outer });
    }
    let reach = outer.floor() as i64;
    let span = (2 * reach + 1) as usize;
    let local = |p: Point| -> Option<usize> {
        // Offsets relative to x, unwrapped on a torus.
        let s = window.side as i64;
        let mut d = [p[0] - x[0], p[1] - x[1]];
        if window.is_periodic() {
            for v in &mut d {
                *v = (*v + s / 2).rem_euclid(s) - s / 2;
            }
        }
        let r2 = (d[0] * d[0] + d[1] * d[1]) as f64;
        (r2 <= outer * outer).then(|| ((d[1] + reach) as usize) * span + (d[0] + reach) as usize)
    };
    let mut parent: Vec<usize> = (0..span * span).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (lower, dir) in sample.traversed_edges() {
        let upper = canonical(window, step(lower, if dir == 0 { 0 } else { 2 })).expect("edge inside window");
        if let (Some(a), Some(b)) = (local(lower), local(upper)) {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
    }
    let mut root = None;
    for p in sample.visited() {
        let Some(i) = local(p) else { continue };
        let off = (i % span) as i64 - reach;
        let offy = (i / span) as i64 - reach;
        if ((off * off + offy * offy) as f64) > radius * radius {
            continue;
        }
        let r = find(&mut parent, i);
        match root {
            None => root = Some(r),
            Some(r0) if r0 != r => return Ok(false),
            _ => {}
        }
    }
    Ok(true)
}

/// Paired samples of `2ℓ_x + φ_x²` (field and interlacement independent) and
/// `(φ'_x + a)²` at the window centre, with `ℓ` the occupation at level `u`.
pub fn isomorphism_samples(
    model: &WalkModel,
    window: &Window,
    a: f64,
    u: f64,
    n_samples: u64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), InterlacementError> {
    let method = if window.is_periodic() { SamplingMethod::Spectral } else { SamplingMethod::Factorization };
    let sampler = FieldSampler::new(model, window, method)?;
    let centre = window.index_or_err(window.center)?;
    let space = (u > 0.0).then(|| InterlacementSpace::whole_window(model, window)).transpose()?;
    let interlace_seed = rng::derive(seed, 1);
    let pairs: Vec<(f64, f64)> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let (phi, phi_prime) = sampler.sample_pair(&mut rng::stream(seed, k));
            let local = match &space {
                Some(s) => s.sample(u, interlace_seed, k).map(|smp| smp.occupation_at(window.center)),
                None => Ok(0.0),
            }?;
            Ok((2.0 * local + phi[centre].powi(2), (phi_prime[centre] + a).powi(2)))
        })
        .collect::<Result<_, InterlacementError>>()?;
    Ok(pairs.into_iter().unzip())
}

/// KS comparison of `2ℓ^{a²/2} + φ²` against `(φ + a)²` at the window centre.
pub fn isomorphism_marginal_test(
    model: &WalkModel,
    window: &Window,
    a: f64,
    n_samples: u64,
    seed: u64,
) -> Result<KsOutcome, InterlacementError> {
    let (lhs, rhs) = isomorphism_samples(model, window, a, a * a / 2.0, n_samples, seed)?;
    Ok(ks_two_sample(&lhs, &rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupation_matches_visits() {
        let model = WalkModel::new(6).unwrap();
        let window = Window::boxed(16).unwrap();
        let space = InterlacementSpace::new(&model, &window, &[[0, 0], [1, 0]]).unwrap();
        let s = space.sample(20.0, 4, 0).unwrap();
        assert!(!s.trajectories.is_empty());
        let occ = s.occupation();
        let visited = s.visited();
        for i in 0..window.len() {
            assert_eq!(occ[i] > 0.0, visited.contains(&window.point(i)));
        }
        for t in &s.trajectories {
            assert!(space.in_anchor[window.index(t.path[t.entry]).unwrap()]);
            assert!(t.path[..t.entry].iter().all(|p| !space.in_anchor[window.index(*p).unwrap()]));
            for w in t.path.windows(2) {
                assert_eq!((w[0][0] - w[1][0]).abs() + (w[0][1] - w[1][1]).abs(), 1);
            }
        }
    }

    #[test]
    fn lower_levels_are_subsets() {
        let model = WalkModel::new(6).unwrap();
        let window = Window::torus(24).unwrap();
        let space = InterlacementSpace::new(&model, &window, &crate::lattice::ball([0, 0], 2.0)).unwrap();
        let s = space.sample(5.0, 1, 2).unwrap();
        let low = s.at_level(2.0);
        assert!(low.visited().is_subset(&s.visited()));
        assert!(low.trajectories.iter().all(|t| t.label <= 2.0));
    }

    #[test]
    fn whole_window_backward_part_is_trivial() {
        let model = WalkModel::new(4).unwrap();
        let window = Window::torus(8).unwrap();
        let space = InterlacementSpace::whole_window(&model, &window).unwrap();
        assert!((space.capacity() - 64.0 / 16.0).abs() < 1e-12);
        let s = space.sample(1.0, 3, 0).unwrap();
        assert!(s.trajectories.iter().all(|t| t.entry == 0 && t.killed == [true, true]));
    }

    #[test]
    fn rejects_bad_level_and_geometry() {
        let model = WalkModel::new(4).unwrap();
        let window = Window::boxed(8).unwrap();
        assert!(matches!(sample_interlacement(&model, &window, 0.0, 1), Err(InterlacementError::BadLevel(_))));
        let s = sample_interlacement(&model, &window, 0.5, 1).unwrap();
        assert!(loc_uniq(&s, [0, 0], 2.0, 3.0).is_err());
        assert!(loc_uniq(&s, [0, 0], 1.0, 2.0).is_ok());
    }

    #[test]
    fn lambda_helper() {
        assert_eq!(loc_uniq_lambda(64, 40.0, 3.0), 3.0);
        assert!(loc_uniq_lambda(64, 16.0, 3.0) >= 2.0);
        let big = loc_uniq_lambda(4096, 4.0, 2.0);
        assert!((big - (1024.0f64).sqrt()).abs() < 1e-9);
    }
}
