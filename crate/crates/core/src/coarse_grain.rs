//! Coarse-graining of lattice paths: a hierarchical binary-tree embedding of
//! boxes along a path, and a peeling construction that repeats it in
//! concentric annuli.
//!
//! Scales follow `L₀ = 10LM`, `l_j = L_j/(j+1)²`, `L_{j+1} = 2(L_j + 10 l_j)`.
//! Among admissible candidates the construction always takes the
//! lexicographically smallest point `(x, then y)`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lattice::{LatticeError, PlaneGreen, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoarseGrainError {
    #[error("need L ≥ 1 and M ≥ 100, got L = {l}, M = {m}")]
    BadParameters { l: u64, m: u64 },
    #[error("no depth k has L_k in [{low}, {high}]: {diagnostics}")]
    NoAdmissibleDepth { low: f64, high: f64, diagnostics: String },
    #[error("scales infeasible: {0}")]
    Infeasible(String),
    #[error("path is empty")]
    EmptyPath,
    #[error("path point {index} {point:?} is not on the lattice of spacing {spacing}")]
    OffLattice { index: usize, point: Point, spacing: i64 },
    #[error("path step {index} from {from:?} to {to:?} is not a unit lattice step")]
    BadStep { index: usize, from: Point, to: Point },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

fn dist2(a: Point, b: Point) -> f64 {
    let dx = (a[0] - b[0]) as f64;
    let dy = (a[1] - b[1]) as f64;
    dx * dx + dy * dy
}

fn within(a: Point, b: Point, r: f64) -> bool {
    dist2(a, b) <= r * r
}

/// Spacing of the renormalized lattice `Λ(l) = (⌊l/√2⌋ ∨ 1) Z²`.
pub fn lattice_spacing(l: f64) -> i64 {
    ((l / std::f64::consts::SQRT_2).floor() as i64).max(1)
}

pub fn on_lattice(p: Point, spacing: i64) -> bool {
    p[0].rem_euclid(spacing) == 0 && p[1].rem_euclid(spacing) == 0
}

/// Whether the lattice balls `B(a, r)` and `B(b, s)` share a site.
pub fn balls_meet(a: Point, r: f64, b: Point, s: f64) -> bool {
    let d = dist2(a, b).sqrt();
    if d > r + s {
        return false;
    }
    if within(a, b, s) || within(b, a, r) {
        return true;
    }
    let t = (r / d).clamp(0.0, 1.0);
    let cx = a[0] as f64 + t * (b[0] - a[0]) as f64;
    let cy = a[1] as f64 + t * (b[1] - a[1]) as f64;
    for dx in -2..=2 {
        for dy in -2..=2 {
            let p = [cx.round() as i64 + dx, cy.round() as i64 + dy];
            if within(p, a, r) && within(p, b, s) {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseGrainScales {
    pub l: u64,
    pub m: u64,
    pub depth: usize,
    /// `L_0, …, L_k`.
    pub big: Vec<f64>,
    /// `l_0, …, l_k`.
    pub small: Vec<f64>,
    pub radius: f64,
}

impl CoarseGrainScales {
    /// `L_0..=L_k` and `l_0..=l_k` for the given depth.
    pub fn sequence(l: u64, m: u64, depth: usize) -> (Vec<f64>, Vec<f64>) {
        let mut big = vec![10.0 * (l * m) as f64];
        let mut small = vec![big[0]];
        for j in 0..depth {
            let next = 2.0 * (big[j] + 10.0 * small[j]);
            big.push(next);
            small.push(next / ((j + 2) * (j + 2)) as f64);
        }
        (big, small)
    }

    /// `L_j / (L·M·2^j)` for each level.
    pub fn growth_ratios(&self) -> Vec<f64> {
        self.big.iter().enumerate().map(|(j, b)| b / ((self.l * self.m) as f64 * 2f64.powi(j as i32))).collect()
    }
}

fn check_lm(l: u64, m: u64) -> Result<(), CoarseGrainError> {
    if l < 1 || m < 100 {
        return Err(CoarseGrainError::BadParameters { l, m });
    }
    Ok(())
}

/// Scales for target radius `R`, with the depth `k ≥ 1` chosen so that
/// `L_k ∈ [R/200, R/4]` (the smallest such `k`).
pub fn make_scales(l: u64, m: u64, radius: f64) -> Result<CoarseGrainScales, CoarseGrainError> {
    check_lm(l, m)?;
    let (low, high) = (radius / 200.0, radius / 4.0);
    let (big, _) = CoarseGrainScales::sequence(l, m, 64);
    match (1..big.len()).find(|&k| big[k] >= low && big[k] <= high) {
        Some(k) => {
            let (big, small) = CoarseGrainScales::sequence(l, m, k);
            Ok(CoarseGrainScales { l, m, depth: k, big, small, radius })
        }
        None => Err(CoarseGrainError::NoAdmissibleDepth {
            low,
            high,
            diagnostics: format!(
                "L_1 = {}, so R ≥ {} is needed (here R = {radius}); with R = LM·log(n) this means log n ≥ {}",
                big[1],
                4.0 * big[1],
                4.0 * big[1] / (l * m) as f64
            ),
        }),
    }
}

/// Scales with an explicit depth and radius. Only the containment condition
/// `4 L_k ≤ R` is enforced.
pub fn scales_with(l: u64, m: u64, depth: usize, radius: f64) -> Result<CoarseGrainScales, CoarseGrainError> {
    check_lm(l, m)?;
    let (big, small) = CoarseGrainScales::sequence(l, m, depth);
    if 4.0 * big[depth] > radius {
        return Err(CoarseGrainError::Infeasible(format!(
            "L_{depth} = {} exceeds R/4 = {}",
            big[depth],
            radius / 4.0
        )));
    }
    Ok(CoarseGrainScales { l, m, depth, big, small, radius })
}

/// Image of the binary tree `T_k`, stored in heap order: node 1 is the root,
/// node `i` has children `2i` (appending 0) and `2i + 1` (appending 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEmbedding {
    pub depth: usize,
    pub root: Point,
    /// `nodes[i]` for `i ≥ 1`; `nodes[0]` is unused.
    pub nodes: Vec<Point>,
    /// Leaf `σ` (heap index `2^k + σ`) → the path site chosen in its box.
    pub leaf_sites: Vec<Point>,
    /// Path index range `[start, end]` assigned to each node.
    pub spans: Vec<(usize, usize)>,
}

impl TreeEmbedding {
    pub fn level_nodes(&self, n: usize) -> std::ops::Range<usize> {
        (1 << n)..(1 << (n + 1))
    }

    /// Binary string of a heap index.
    pub fn label(index: usize) -> String {
        let bits = usize::BITS - index.leading_zeros() - 1;
        (0..bits).rev().map(|b| if index >> b & 1 == 1 { '1' } else { '0' }).collect()
    }
}

fn first_candidate(spacing: i64, anchor: Point, reach: f64, admissible: impl Fn(Point) -> bool) -> Option<Point> {
    let r = reach.floor() as i64;
    let lo = |v: i64| (v - r).div_euclid(spacing) * spacing;
    let mut x = lo(anchor[0]);
    while x <= anchor[0] + r {
        let mut y = lo(anchor[1]);
        while y <= anchor[1] + r {
            let p = [x, y];
            if within(p, anchor, reach) && admissible(p) {
                return Some(p);
            }
            y += spacing;
        }
        x += spacing;
    }
    None
}

struct Embedder<'a> {
    path: &'a [Point],
    scales: &'a CoarseGrainScales,
    nodes: Vec<Point>,
    spans: Vec<(usize, usize)>,
}

impl Embedder<'_> {
    fn place(&mut self, node: usize, y: Point, level: usize, start: usize) -> Result<(), CoarseGrainError> {
        let big = self.scales.big[level];
        let small = self.scales.small[level];
        let path = self.path;
        let label = TreeEmbedding::label(node);
        if !within(path[start], y, small) {
            return Err(CoarseGrainError::Precondition(format!(
                "node '{label}': path segment starting at index {start} does not start within l_{level} = {small} of {y:?}"
            )));
        }
        let end = (start..path.len()).find(|&t| !within(path[t], y, 2.0 * big)).ok_or_else(|| {
            CoarseGrainError::Precondition(format!(
                "node '{label}': path segment from index {start} never leaves B({y:?}, 2L_{level} = {})",
                2.0 * big
            ))
        })?;
        self.nodes[node] = y;
        self.spans[node] = (start, end);
        if level == 0 {
            return Ok(());
        }
        let last = (start..=end).rev().find(|&t| within(path[t], y, big)).expect("segment starts inside");
        let inner = self.scales.small[level - 1];
        let spacing = lattice_spacing(inner);
        let left = first_candidate(spacing, path[start], inner, |p| within(p, y, small + inner)).ok_or_else(|| {
            CoarseGrainError::Precondition(format!("node '{label}0': no admissible site near path index {start}"))
        })?;
        let right = first_candidate(spacing, path[last + 1], inner, |p| {
            within(p, y, big + 2.0 * inner) && !within(p, y, big - inner)
        })
        .ok_or_else(|| {
            CoarseGrainError::Precondition(format!(
                "node '{label}1': no admissible site in the annulus near path index {}",
                last + 1
            ))
        })?;
        self.place(2 * node, left, level - 1, start)?;
        self.place(2 * node + 1, right, level - 1, last + 1)
    }
}

/// Tree embedding rooted at `path[start]` (taken as `x`).
pub fn embed_tree_from(path: &[Point], start: usize, scales: &CoarseGrainScales) -> Result<TreeEmbedding, CoarseGrainError> {
    if path.is_empty() {
        return Err(CoarseGrainError::EmptyPath);
    }
    embed_tree_at(path, start, path[start], scales)
}

/// Tree embedding of depth `scales.depth` rooted at `x` for the path from
/// `path[start]`, which must lie within `l_k` of `x`.
pub fn embed_tree_at(
    path: &[Point],
    start: usize,
    x: Point,
    scales: &CoarseGrainScales,
) -> Result<TreeEmbedding, CoarseGrainError> {
    let k = scales.depth;
    let size = 1 << (k + 1);
    let mut e = Embedder { path, scales, nodes: vec![[0, 0]; size], spans: vec![(0, 0); size] };
    e.place(1, x, k, start)?;
    let leaf_sites = ((1 << k)..size).map(|i| path[e.spans[i].0]).collect();
    Ok(TreeEmbedding { depth: k, root: x, nodes: e.nodes, leaf_sites, spans: e.spans })
}

/// Tree embedding for a whole path starting near `x`.
pub fn embed_tree(path: &[Point], x: Point, scales: &CoarseGrainScales) -> Result<TreeEmbedding, CoarseGrainError> {
    if path.is_empty() {
        return Err(CoarseGrainError::EmptyPath);
    }
    embed_tree_at(path, 0, x, scales)
}

/// One failed instance of a structural property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub property: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub property: String,
    pub checked: u64,
    pub violations: Vec<Violation>,
}

impl PropertyCheck {
    fn new(property: &str) -> Self {
        Self { property: property.into(), checked: 0, violations: Vec::new() }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok && self.violations.len() < 20 {
            self.violations.push(Violation { property: self.property.clone(), detail: detail() });
        }
    }
}

/// Exhaustive check of the embedding properties against the path.
pub fn verify_embedding(tree: &TreeEmbedding, path: &[Point], scales: &CoarseGrainScales) -> Vec<PropertyCheck> {
    let k = tree.depth;
    let big = &scales.big;
    let small = &scales.small;
    let mut root = PropertyCheck::new("root");
    root.record(tree.nodes[1] == tree.root, || format!("τ(∅) = {:?} ≠ {:?}", tree.nodes[1], tree.root));

    let mut position = PropertyCheck::new("position");
    for n in 0..k {
        let (outer, inner) = (big[k - n], small[k - n]);
        let finer = small[k - n - 1];
        let spacing = lattice_spacing(finer);
        for s in tree.level_nodes(n) {
            let y = tree.nodes[s];
            let (a, b) = (tree.nodes[2 * s], tree.nodes[2 * s + 1]);
            position.record(on_lattice(a, spacing) && within(a, y, inner + finer), || {
                format!("τ({}0) = {a:?} misplaced relative to {y:?}", TreeEmbedding::label(s))
            });
            position.record(
                on_lattice(b, spacing) && within(b, y, outer + 2.0 * finer) && !within(b, y, outer - finer),
                || format!("τ({}1) = {b:?} outside the annulus about {y:?}", TreeEmbedding::label(s)),
            );
        }
    }

    let mut separation = PropertyCheck::new("separation");
    for n in 0..=k {
        let gap = 2.0 * big[k - n] + 10.0 * small[k - n];
        let level: Vec<usize> = tree.level_nodes(n).collect();
        for (i, &s) in level.iter().enumerate() {
            for &t in &level[i + 1..] {
                separation.record(dist2(tree.nodes[s], tree.nodes[t]) >= gap * gap, || {
                    format!("|τ({}) − τ({})| < {gap}", TreeEmbedding::label(s), TreeEmbedding::label(t))
                });
            }
        }
    }

    let mut nesting = PropertyCheck::new("nesting");
    for n in 0..=k {
        for s in tree.level_nodes(n) {
            for d in 0..(1 << (k - n)) {
                let leaf = (s << (k - n)) + d;
                nesting.record(
                    balls_meet(tree.nodes[s], 2.0 * big[k - n], tree.nodes[leaf], 2.0 * big[0]),
                    || format!("D around τ({}) misses D around τ({})", TreeEmbedding::label(s), TreeEmbedding::label(leaf)),
                );
            }
        }
    }

    let mut leaves = PropertyCheck::new("leaf_hits_path");
    let end = tree.spans[1].1;
    for s in tree.level_nodes(k) {
        let y = tree.nodes[s];
        let hit = path[tree.spans[1].0..=end].iter().any(|&p| within(p, y, small[0]));
        leaves.record(hit, || format!("box of radius l_0 about τ({}) = {y:?} misses the path", TreeEmbedding::label(s)));
    }
    vec![root, position, separation, nesting, leaves]
}

/// Annulus `Ann_i` radii `((5i−2)N/5P, (5i−1)N/5P]`.
pub fn annulus_radii(i: usize, mass_scale: f64, blocks: usize) -> (f64, f64) {
    let unit = mass_scale / (5.0 * blocks as f64);
    ((5 * i - 2) as f64 * unit, (5 * i - 1) as f64 * unit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseGrainPart {
    pub index: usize,
    pub entry: Point,
    pub entry_index: usize,
    pub tree: TreeEmbedding,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseGrainResult {
    pub center: Point,
    pub mass_scale: u64,
    pub scales: CoarseGrainScales,
    /// `n = N/(ML)`.
    pub n: f64,
    pub blocks: usize,
    pub exclusion_radius: Option<f64>,
    pub parts: Vec<CoarseGrainPart>,
    pub collection: Vec<Point>,
    pub path_digest: String,
}

impl CoarseGrainResult {
    /// `Σ(C)`: the union of balls of radius `L` about the selected sites.
    pub fn boxes(&self, sites: &[Point]) -> Vec<Point> {
        let mut out: Vec<Point> =
            sites.iter().flat_map(|&c| crate::lattice::ball(c, self.scales.l as f64)).collect();
        out.sort();
        out.dedup();
        out
    }
}

pub fn path_digest(path: &[Point]) -> String {
    let mut h = Sha256::new();
    for p in path {
        h.update(p[0].to_le_bytes());
        h.update(p[1].to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Checks that the path lives on `Λ(L)` with unit lattice steps.
pub fn validate_path(path: &[Point], l: u64) -> Result<(), CoarseGrainError> {
    if path.is_empty() {
        return Err(CoarseGrainError::EmptyPath);
    }
    let spacing = lattice_spacing(l as f64);
    for (index, &point) in path.iter().enumerate() {
        if !on_lattice(point, spacing) {
            return Err(CoarseGrainError::OffLattice { index, point, spacing });
        }
    }
    for (index, w) in path.windows(2).enumerate() {
        let d = (w[0][0] - w[1][0]).abs() + (w[0][1] - w[1][1]).abs();
        if d != spacing {
            return Err(CoarseGrainError::BadStep { index: index + 1, from: w[0], to: w[1] });
        }
    }
    Ok(())
}

/// Peeling: in each annulus `Ann_i` take the first path site and embed a
/// tree there; the collection is the union of the leaf sites.
pub fn coarse_grain_path(
    path: &[Point],
    x: Point,
    mass_scale: u64,
    scales: &CoarseGrainScales,
    exclusion_radius: Option<f64>,
) -> Result<CoarseGrainResult, CoarseGrainError> {
    validate_path(path, scales.l)?;
    let l = scales.l as f64;
    let n_big = mass_scale as f64;
    if !within(path[0], x, l) {
        return Err(CoarseGrainError::Precondition(format!("path starts at {:?}, outside B({x:?}, L)", path[0])));
    }
    if !path.iter().any(|&p| !within(p, x, n_big - 2.0 * l)) {
        return Err(CoarseGrainError::Precondition(format!("path never leaves B({x:?}, N − 2L)")));
    }
    let blocks = (n_big / (5.0 * scales.radius)).floor() as usize;
    if blocks == 0 {
        return Err(CoarseGrainError::Infeasible(format!("N = {mass_scale} is below 5R = {}", 5.0 * scales.radius)));
    }
    let mut parts = Vec::with_capacity(blocks);
    for i in 1..=blocks {
        let (lo, hi) = annulus_radii(i, n_big, blocks);
        let entry_index = path
            .iter()
            .position(|&p| !within(p, x, lo) && within(p, x, hi))
            .ok_or_else(|| CoarseGrainError::Precondition(format!("path never enters annulus {i} ({lo}, {hi}]")))?;
        let entry = path[entry_index];
        let tree = embed_tree_from(path, entry_index, scales)
            .map_err(|e| CoarseGrainError::Precondition(format!("annulus {i}: {e}")))?;
        let points = tree.leaf_sites.clone();
        parts.push(CoarseGrainPart { index: i, entry, entry_index, tree, points });
    }
    let collection = parts.iter().flat_map(|p| p.points.iter().copied()).collect();
    Ok(CoarseGrainResult {
        center: x,
        mass_scale,
        scales: scales.clone(),
        n: n_big / (scales.l * scales.m) as f64,
        blocks,
        exclusion_radius,
        parts,
        collection,
        path_digest: path_digest(path),
    })
}

/// Exhaustive verification of a coarse-graining against its path.
pub fn verify_result(result: &CoarseGrainResult, path: &[Point]) -> Vec<PropertyCheck> {
    let mut checks: Vec<PropertyCheck> = Vec::new();
    let scales = &result.scales;
    let mut tree_checks: Vec<PropertyCheck> = Vec::new();
    for part in &result.parts {
        for (i, c) in verify_embedding(&part.tree, path, scales).into_iter().enumerate() {
            if tree_checks.len() <= i {
                tree_checks.push(PropertyCheck::new(&c.property));
            }
            tree_checks[i].checked += c.checked;
            tree_checks[i].violations.extend(c.violations);
        }
    }
    checks.extend(tree_checks);

    let mut subset = PropertyCheck::new("on_path");
    let mut missing: HashSet<Point> = result.collection.iter().copied().collect();
    for p in path {
        missing.remove(p);
    }
    for p in &result.collection {
        subset.record(!missing.contains(p), || format!("{p:?} is not on the path"));
    }
    checks.push(subset);

    let spacing = lattice_spacing(scales.l as f64);
    let mut lattice = PropertyCheck::new("on_lattice");
    for &p in &result.collection {
        lattice.record(on_lattice(p, spacing), || format!("{p:?} is off Λ(L)"));
    }
    checks.push(lattice);

    let gap = 16.0 * (scales.l * scales.m) as f64;
    let mut spaced = PropertyCheck::new("spacing");
    for (i, &a) in result.collection.iter().enumerate() {
        for &b in &result.collection[i + 1..] {
            spaced.record(dist2(a, b) >= gap * gap, || format!("|{a:?} − {b:?}| < 16ML = {gap}"));
        }
    }
    checks.push(spaced);

    let l = scales.l as f64;
    let centre_ball = crate::lattice::ball(result.center, l);
    let mut anchoring = PropertyCheck::new("anchoring");
    for part in &result.parts {
        let need = (5 * part.index - 4) as f64 * scales.radius;
        for y in result.boxes(&part.points) {
            let rough = dist2(y, result.center).sqrt() - l;
            let ok = rough >= need || centre_ball.iter().all(|&z| dist2(y, z) >= need * need);
            anchoring.record(ok, || format!("part {}: d({y:?}, B(x, L)) < {need}", part.index));
        }
    }
    checks.push(anchoring);

    let mut inside = PropertyCheck::new("inside_window");
    for &p in &result.collection {
        let n = result.mass_scale as f64;
        let outside_exclusion = result.exclusion_radius.is_none_or(|r| !within(p, result.center, 2.0 * r));
        inside.record(within(p, result.center, n) && outside_exclusion, || format!("{p:?} outside B(x, N) or inside the exclusion ball"));
    }
    checks.push(inside);
    checks
}

/// `H = (1/n)·log(n)² + (1/n)·log(M log n)·log n`.
pub fn entropy_scale(n: f64, m: u64) -> f64 {
    let ln = n.ln();
    (ln * ln + (m as f64 * ln).ln() * ln) / n
}

/// Capacity of `Σ(C̃)` after dropping `⌊ρ|C|⌋` sites, greedily removing the
/// box carrying the most equilibrium mass each time. Returns the capacities
/// after each removal, starting with the full collection.
pub fn capacity_of_coarse_grained(
    result: &CoarseGrainResult,
    green: &PlaneGreen,
    rho: f64,
) -> Result<Vec<f64>, CoarseGrainError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(CoarseGrainError::Infeasible(format!("fraction ρ = {rho} outside [0, 1)")));
    }
    let mut kept = result.collection.clone();
    let drops = (rho * kept.len() as f64).floor() as usize;
    let mut caps = Vec::with_capacity(drops + 1);
    for step in 0..=drops {
        let boxes: Vec<Vec<Point>> = kept.iter().map(|&c| crate::lattice::ball(c, result.scales.l as f64)).collect();
        let union = result.boxes(&kept);
        let weights = green.equilibrium_weights(&union)?;
        caps.push(weights.iter().sum());
        if step == drops {
            break;
        }
        let mass = |b: &Vec<Point>| -> f64 {
            b.iter().map(|p| union.binary_search(p).map(|i| weights[i]).unwrap_or(0.0)).sum()
        };
        let heaviest = (0..kept.len())
            .max_by(|&i, &j| mass(&boxes[i]).total_cmp(&mass(&boxes[j])).then(j.cmp(&i)))
            .expect("nonempty");
        kept.remove(heaviest);
    }
    Ok(caps)
}
