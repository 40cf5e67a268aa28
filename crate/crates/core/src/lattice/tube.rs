//! Porous tubes: `P` blocks of scale `N/P` placed along a horizontal segment
//! of length `N`, of which only those indexed by `A` are kept.

use serde::{Deserialize, Serialize};

use super::{distance, LatticeError, PlaneGreen, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TubeShape {
    /// Horizontal segment of length `scale · N/P` at the left of each block.
    Segments,
    /// Square of side `scale · N/P` at the left of each block.
    Boxes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub mass_scale: u64,
    pub blocks: usize,
    pub indices: Vec<usize>,
    pub sets: Vec<Vec<Point>>,
    /// Smallest `δ` with `d(S_i, S_j) ≥ (|i − j| − δ) N/P` for all pairs.
    pub separation_delta: f64,
    /// Smallest `D` with `|x₁ − x₂| ≤ (|i − j| + D) N/P` for all pairs and points.
    pub diameter_slack: f64,
}

impl Tube {
    pub fn union(&self) -> Vec<Point> {
        let mut all: Vec<Point> = self.sets.iter().flatten().copied().collect();
        all.sort();
        all.dedup();
        all
    }
}

pub fn build_tube(
    mass_scale: u64,
    blocks: usize,
    indices: &[usize],
    shape: TubeShape,
    scale: f64,
) -> Result<Tube, LatticeError> {
    if blocks == 0 || blocks as u64 > mass_scale {
        return Err(LatticeError::Infeasible(format!("need 1 ≤ P ≤ N, got P = {blocks}, N = {mass_scale}")));
    }
    if indices.is_empty() {
        return Err(LatticeError::Infeasible("index set A is empty".into()));
    }
    if let Some(i) = indices.iter().find(|&&i| i == 0 || i > blocks) {
        return Err(LatticeError::Infeasible(format!("index {i} outside 1..={blocks}")));
    }
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(LatticeError::Infeasible(format!("scale {scale} outside (0, 1]")));
    }
    let mut indices = indices.to_vec();
    indices.sort_unstable();
    indices.dedup();

    let block = mass_scale as f64 / blocks as f64;
    let extent = ((scale * block).floor() as i64).max(1);
    let half = mass_scale as i64 / 2;
    let sets: Vec<Vec<Point>> = indices
        .iter()
        .map(|&i| {
            let left = ((i - 1) as f64 * block).round() as i64 - half;
            match shape {
                TubeShape::Segments if blocks as u64 == mass_scale => vec![[left, 0]],
                TubeShape::Segments => (0..extent).map(|dx| [left + dx, 0]).collect(),
                TubeShape::Boxes => {
                    let mut s = Vec::new();
                    for dy in 0..extent {
                        for dx in 0..extent {
                            s.push([left + dx, dy - extent / 2]);
                        }
                    }
                    s
                }
            }
        })
        .collect();

    let mut separation_delta = f64::NEG_INFINITY;
    let mut diameter_slack = f64::NEG_INFINITY;
    for a in 0..sets.len() {
        for b in 0..sets.len() {
            if a == b {
                continue;
            }
            let gap = indices[a].abs_diff(indices[b]) as f64;
            let mut nearest = f64::INFINITY;
            let mut farthest: f64 = 0.0;
            for &p in &sets[a] {
                for &q in &sets[b] {
                    let d = distance(p, q);
                    nearest = nearest.min(d);
                    farthest = farthest.max(d);
                }
            }
            separation_delta = separation_delta.max(gap - nearest / block);
            diameter_slack = diameter_slack.max(farthest / block - gap);
        }
    }
    if sets.len() == 1 {
        separation_delta = 0.0;
        diameter_slack = 0.0;
    }
    Ok(Tube { mass_scale, blocks, indices, sets, separation_delta, diameter_slack })
}

/// The full lattice segment `{(x, 0) : 0 ≤ x + N/2 ≤ N}` of `N + 1` points.
pub fn full_segment(mass_scale: u64) -> Vec<Point> {
    let half = mass_scale as i64 / 2;
    (0..=mass_scale as i64).map(|x| [x - half, 0]).collect()
}

/// Capacity of a horizontal run of `len` consecutive sites, using that its
/// Green's matrix is Toeplitz.
pub fn segment_capacity(green: &PlaneGreen, len: usize) -> Result<f64, LatticeError> {
    let points: Vec<Point> = (0..len as i64).map(|x| [x, 0]).collect();
    green.capacity(&points)
}

/// Lower-bound comparison `cap ≥ [(cκP)⁻¹ + (1+ε)/cap_cont]⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeBound {
    pub cap: f64,
    /// Smallest single-block capacity `κ`.
    pub kappa: f64,
    /// Largest `c` for which the bound holds; `None` when it holds for every `c`.
    pub fitted_c: Option<f64>,
}

impl TubeBound {
    pub fn holds_at(&self, c: f64) -> bool {
        self.fitted_c.is_none_or(|max| c <= max)
    }

    pub fn rhs(&self, c: f64, blocks: usize, epsilon: f64, continuum_cap: f64) -> f64 {
        1.0 / (1.0 / (c * self.kappa * blocks as f64) + (1.0 + epsilon) / continuum_cap)
    }
}

pub fn tube_bound(tube: &Tube, green: &PlaneGreen, epsilon: f64, continuum_cap: f64) -> Result<TubeBound, LatticeError> {
    let cap = green.capacity(&tube.union())?;
    let mut kappa = f64::INFINITY;
    for s in &tube.sets {
        kappa = kappa.min(green.capacity(s)?);
    }
    let slack = 1.0 / cap - (1.0 + epsilon) / continuum_cap;
    let fitted_c = (slack > 0.0).then(|| 1.0 / (kappa * tube.blocks as f64 * slack));
    Ok(TubeBound { cap, kappa, fitted_c })
}
