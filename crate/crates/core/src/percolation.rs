//! Percolation of the excursion set `{φ ≥ a}` of the field on the cable
//! system, tracked at vertex resolution.
//!
//! Given the values at its endpoints, the field along a cable is a Brownian
//! bridge, so an edge between two sites above the level is entirely above it
//! with probability [`open_edge_prob`]. Edges are opened with shared per-edge
//! uniforms, which couples all levels monotonically.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gff::{Field, FieldSampler, GffError, SamplingMethod};
use crate::lattice::{LatticeError, Point, WalkModel, Window};
use crate::rng;

#[derive(Debug, Error)]
pub enum PercolationError {
    #[error("need at least one sample")]
    NoSamples,
    #[error("radius {radius} must be at least 1 and at most {max} for this window")]
    BadRadius { radius: u64, max: i64 },
    #[error("at most 64 coupled levels are supported, got {0}")]
    TooManyLevels(usize),
    #[error(transparent)]
    Sampling(#[from] GffError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Probability that the bridge along an edge of conductance `conductance`
/// stays above the level, given endpoint excesses `u` and `v`.
pub fn open_edge_prob(u: f64, v: f64, conductance: f64) -> f64 {
    if u < 0.0 || v < 0.0 {
        return 0.0;
    }
    -(-2.0 * conductance * u * v).exp_m1()
}

/// Edge directions from a site.
const EAST: u8 = 1;
const NORTH: u8 = 2;

/// The uniform attached to the edge from `p` towards `+x` (`dir = EAST`) or
/// `+y` (`dir = NORTH`).
#[inline]
pub fn edge_uniform(seed: u64, p: Point, dir: u8) -> f64 {
    let key = ((p[0] as u32 as u64) << 32) | p[1] as u32 as u64;
    rng::hash_uniform(seed, key, dir as u64)
}

/// Edge seed for sample `index` of a run.
pub fn edge_seed(seed: u64, index: u64) -> u64 {
    rng::derive(seed, index)
}

struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let grand = self.parent[self.parent[i as usize] as usize];
            self.parent[i as usize] = grand;
            i = grand;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a as usize] < self.size[b as usize] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b as usize] = a;
        self.size[a as usize] += self.size[b as usize];
    }
}

/// Clusters of the excursion set at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    pub window: Window,
    pub level: f64,
    /// Cluster id per site (row-major), `None` below the level. Ids are
    /// numbered in order of first appearance.
    pub labels: Vec<Option<u32>>,
    /// Per site: bit 0 set if the edge towards `+x` is open, bit 1 for `+y`.
    pub open: Vec<u8>,
}

impl ClusterLabeling {
    pub fn label(&self, p: Point) -> Option<u32> {
        self.window.index(p).and_then(|i| self.labels[i])
    }

    pub fn cluster_count(&self) -> usize {
        self.labels.iter().flatten().map(|&l| l as usize + 1).max().unwrap_or(0)
    }

    pub fn open_edge_count(&self) -> usize {
        self.open.iter().map(|b| b.count_ones() as usize).sum()
    }
}

/// Site index of the `+x` / `+y` neighbour, if the window has one.
fn forward_neighbour(window: &Window, i: usize, dir: u8) -> Option<usize> {
    let s = window.side;
    let (x, y) = (i % s, i / s);
    match dir {
        EAST if x + 1 < s => Some(i + 1),
        EAST if window.is_periodic() => Some(i + 1 - s),
        NORTH if y + 1 < s => Some(i + s),
        NORTH if window.is_periodic() => Some(x),
        _ => None,
    }
}

/// Marks sites at or above `|abar|`, opens edges between marked sites with
/// [`open_edge_prob`] using uniforms keyed by `seed`, and labels clusters.
pub fn percolate(field: &Field, abar: f64, seed: u64) -> ClusterLabeling {
    let level = abar.abs();
    let window = field.window;
    let phi = &field.values;
    let conductance = field.model.edge_conductance();
    let n = window.len();
    let mut uf = UnionFind::new(n);
    let mut open = vec![0u8; n];
    for i in 0..n {
        if phi[i] < level {
            continue;
        }
        for dir in [EAST, NORTH] {
            let Some(j) = forward_neighbour(&window, i, dir) else { continue };
            if phi[j] < level {
                continue;
            }
            let p = open_edge_prob(phi[i] - level, phi[j] - level, conductance);
            if edge_uniform(seed, window.point(i), dir) < p {
                open[i] |= dir;
                uf.union(i as u32, j as u32);
            }
        }
    }
    let mut ids = vec![u32::MAX; n];
    let mut next = 0;
    let labels = (0..n)
        .map(|i| {
            if phi[i] < level {
                return None;
            }
            let root = uf.find(i as u32) as usize;
            if ids[root] == u32::MAX {
                ids[root] = next;
                next += 1;
            }
            Some(ids[root])
        })
        .collect();
    ClusterLabeling { window, level, labels, open }
}

fn check_radius(window: &Window, radius: u64) -> Result<(), PercolationError> {
    let max = window.inner_radius() - 1;
    if radius == 0 || radius as i64 > max {
        return Err(PercolationError::BadRadius { radius, max });
    }
    Ok(())
}

/// Whether the cluster of the window centre meets the shell `R ≤ |x| < R + 1`.
pub fn one_arm(labeling: &ClusterLabeling, radius: u64) -> Result<bool, PercolationError> {
    check_radius(&labeling.window, radius)?;
    let center = labeling.window.center;
    let Some(own) = labeling.label(center) else { return Ok(false) };
    let r = radius as i64;
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = dx * dx + dy * dy;
            if d2 >= r * r && d2 < (r + 1) * (r + 1) && labeling.label([center[0] + dx, center[1] + dy]) == Some(own) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Settings of a one-arm Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSetConfig {
    pub level_abar: f64,
    pub mass_scale: u64,
    pub radius: u64,
    pub window: Window,
    pub method: SamplingMethod,
    pub samples: u64,
    pub seed: u64,
}

/// Default ratio of torus side to mass scale.
pub const DEFAULT_SIDE_FACTOR: usize = 8;

impl LevelSetConfig {
    /// Radius `N` on a torus of side `side_factor · N` (at least 8).
    pub fn new(level_abar: f64, mass_scale: u64, side_factor: usize, samples: u64, seed: u64) -> Result<Self, PercolationError> {
        let side = (side_factor * mass_scale as usize).max(8);
        let config = Self {
            level_abar,
            mass_scale,
            radius: mass_scale,
            window: Window::torus(side)?,
            method: SamplingMethod::Spectral,
            samples,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PercolationError> {
        if self.samples == 0 {
            return Err(PercolationError::NoSamples);
        }
        WalkModel::new(self.mass_scale)?;
        check_radius(&self.window, self.radius)
    }

    pub fn digest(&self, levels: &[f64]) -> String {
        let text = serde_json::to_string(&(self, levels)).expect("config serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub level_abar: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub hits: u64,
    pub digest: String,
}

impl ThetaEstimate {
    pub fn from_hits(level_abar: f64, hits: u64, n_samples: u64, digest: String) -> Self {
        let p_hat = hits as f64 / n_samples as f64;
        let stderr = (p_hat * (1.0 - p_hat) / n_samples as f64).sqrt();
        Self { level_abar, p_hat, stderr, n_samples, hits, digest }
    }
}

struct Scratch {
    first: Vec<f64>,
    second: Vec<f64>,
    stamp: Vec<u32>,
    generation: u32,
    queue: Vec<Point>,
}

/// Reusable one-arm evaluator for a fixed window and radius.
struct Explorer {
    window: Window,
    radius: i64,
    conductance: f64,
}

impl Explorer {
    fn scratch(&self) -> Scratch {
        let span = (2 * self.radius + 3) as usize;
        Scratch { first: Vec::new(), second: Vec::new(), stamp: vec![0; span * span], generation: 0, queue: Vec::new() }
    }

    /// Search from the centre through open edges, never leaving `|x| < R + 1`.
    /// A path to the shell exists iff the full cluster reaches it, since the
    /// norm changes by at most one per step.
    fn reaches_shell(&self, phi: &[f64], level: f64, edges: u64, scratch: &mut Scratch) -> bool {
        let c = self.window.center;
        let value = |p: Point| phi[self.window.index(p).expect("inside window")];
        if value(c) < level {
            return false;
        }
        let r = self.radius;
        let span = 2 * r + 3;
        let slot = |p: Point| ((p[1] - c[1] + r + 1) * span + (p[0] - c[0] + r + 1)) as usize;
        scratch.generation = scratch.generation.wrapping_add(1);
        if scratch.generation == 0 {
            scratch.stamp.fill(0);
            scratch.generation = 1;
        }
        let g = scratch.generation;
        scratch.queue.clear();
        scratch.queue.push(c);
        scratch.stamp[slot(c)] = g;
        while let Some(p) = scratch.queue.pop() {
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            if dx * dx + dy * dy >= r * r {
                return true;
            }
            let vp = value(p) - level;
            for (q, key, dir) in [
                ([p[0] + 1, p[1]], p, EAST),
                ([p[0] - 1, p[1]], [p[0] - 1, p[1]], EAST),
                ([p[0], p[1] + 1], p, NORTH),
                ([p[0], p[1] - 1], [p[0], p[1] - 1], NORTH),
            ] {
                let (ex, ey) = (q[0] - c[0], q[1] - c[1]);
                if ex * ex + ey * ey >= (r + 1) * (r + 1) || scratch.stamp[slot(q)] == g {
                    continue;
                }
                let vq = value(q) - level;
                if vq < 0.0 {
                    continue;
                }
                if edge_uniform(edges, key, dir) < open_edge_prob(vp, vq, self.conductance) {
                    scratch.stamp[slot(q)] = g;
                    scratch.queue.push(q);
                }
            }
        }
        false
    }

    fn outcome(&self, phi: &[f64], levels: &[f64], edges: u64, scratch: &mut Scratch) -> u64 {
        let mut bits = 0;
        for (l, &level) in levels.iter().enumerate() {
            if self.reaches_shell(phi, level.abs(), edges, scratch) {
                bits |= 1 << l;
            }
        }
        bits
    }
}

/// Per-sample one-arm outcomes of a coupled run: bit `l` of entry `k` tells
/// whether sample `k` has the arm at `levels[l]`. All levels see the same
/// fields and edge uniforms. Sample `k` uses field `k` of the run seed and
/// edge seed [`edge_seed`]`(seed, k)`, whatever the scheduling.
pub fn coupled_outcomes(config: &LevelSetConfig, levels: &[f64]) -> Result<Vec<u64>, PercolationError> {
    config.validate()?;
    if levels.len() > 64 {
        return Err(PercolationError::TooManyLevels(levels.len()));
    }
    let model = WalkModel::new(config.mass_scale)?;
    let sampler = FieldSampler::new(&model, &config.window, config.method)?;
    let explorer =
        Explorer { window: config.window, radius: config.radius as i64, conductance: model.edge_conductance() };
    let pairs = config.samples.div_ceil(2);
    let mut outcomes: Vec<u64> = (0..pairs)
        .into_par_iter()
        .map_init(
            || explorer.scratch(),
            |scratch, j| {
                let mut stream = rng::stream(config.seed, j);
                let (mut first, mut second) = (std::mem::take(&mut scratch.first), std::mem::take(&mut scratch.second));
                sampler.sample_pair_into(&mut stream, &mut first, &mut second);
                let a = explorer.outcome(&first, levels, edge_seed(config.seed, 2 * j), scratch);
                let b = explorer.outcome(&second, levels, edge_seed(config.seed, 2 * j + 1), scratch);
                scratch.first = first;
                scratch.second = second;
                [a, b]
            },
        )
        .flatten_iter()
        .collect();
    outcomes.truncate(config.samples as usize);
    Ok(outcomes)
}

/// Coupled estimates of `θ` at several levels from one set of samples.
pub fn estimate_theta_levels(config: &LevelSetConfig, levels: &[f64]) -> Result<Vec<ThetaEstimate>, PercolationError> {
    let outcomes = coupled_outcomes(config, levels)?;
    let digest = config.digest(levels);
    Ok(levels
        .iter()
        .enumerate()
        .map(|(l, &a)| {
            let hits = outcomes.iter().filter(|&&o| o >> l & 1 == 1).count() as u64;
            ThetaEstimate::from_hits(a.abs(), hits, config.samples, digest.clone())
        })
        .collect())
}

/// Monte Carlo estimate of the one-arm probability at `config.level_abar`.
pub fn estimate_theta(config: &LevelSetConfig) -> Result<ThetaEstimate, PercolationError> {
    Ok(estimate_theta_levels(config, &[config.level_abar])?.remove(0))
}
