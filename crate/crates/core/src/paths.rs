//! Nearest-neighbour paths on `Λ(L)` leading from a centre out of a ball:
//! straight lines, spirals and random staircase bridges.

use rand::Rng;
use rand::seq::SliceRandom;

use crate::coarse_grain::lattice_spacing;
use crate::lattice::Point;
use crate::rng;

/// Appends a staircase from the last point of `path` to `to` (both on the
/// lattice of the given spacing). Steps are interleaved at random when an
/// RNG is given, otherwise horizontal steps come first.
fn staircase(path: &mut Vec<Point>, to: Point, spacing: i64, rng: Option<&mut rng::Stream>) {
    let from = *path.last().expect("nonempty path");
    let (dx, dy) = ((to[0] - from[0]) / spacing, (to[1] - from[1]) / spacing);
    let mut steps: Vec<bool> = std::iter::repeat_n(true, dx.unsigned_abs() as usize)
        .chain(std::iter::repeat_n(false, dy.unsigned_abs() as usize))
        .collect();
    if let Some(rng) = rng {
        steps.shuffle(rng);
    }
    let mut p = from;
    for horizontal in steps {
        if horizontal {
            p[0] += spacing * dx.signum();
        } else {
            p[1] += spacing * dy.signum();
        }
        path.push(p);
    }
}

fn snap(v: f64, spacing: i64) -> i64 {
    (v / spacing as f64).round() as i64 * spacing
}

fn snap_point(center: Point, r: f64, angle: f64, spacing: i64) -> Point {
    [
        center[0] + snap(r * angle.cos(), spacing),
        center[1] + snap(r * angle.sin(), spacing),
    ]
}

/// Straight ray from `center` along the given angle until it leaves `B(center, reach)`.
pub fn straight(center: Point, reach: f64, angle: f64, l: u64) -> Vec<Point> {
    let spacing = lattice_spacing(l as f64);
    let mut path = vec![center];
    let end = snap_point(center, reach + 2.0 * spacing as f64, angle, spacing);
    staircase(&mut path, end, spacing, None);
    path
}

/// Archimedean spiral making `turns` turns before leaving `B(center, reach)`.
pub fn spiral(center: Point, reach: f64, turns: f64, phase: f64, l: u64) -> Vec<Point> {
    let spacing = lattice_spacing(l as f64);
    let total = turns * std::f64::consts::TAU;
    let mut path = vec![center];
    let pieces = (turns * reach / (8.0 * spacing as f64)).ceil().max(16.0) as usize;
    for i in 1..=pieces {
        let t = i as f64 / pieces as f64;
        let r = t * (reach + 2.0 * spacing as f64);
        let to = snap_point(center, r, phase + t * total, spacing);
        staircase(&mut path, to, spacing, None);
    }
    path
}

/// Random staircase bridges between waypoints drifting outward with random
/// angular moves and occasional inward steps.
pub fn random_bridges(center: Point, reach: f64, l: u64, seed: u64, index: u64) -> Vec<Point> {
    let spacing = lattice_spacing(l as f64);
    let mut rng = rng::stream(seed, index);
    let stride = reach / rng.random_range(4.0..16.0);
    let mut r = 0.0;
    let mut angle = rng.random_range(0.0..std::f64::consts::TAU);
    let mut path = vec![center];
    while r <= reach + 2.0 * spacing as f64 {
        r = (r + stride * rng.random_range(-0.25..1.0)).max(0.0);
        angle += rng.random_range(-1.0..1.0);
        let to = snap_point(center, r, angle, spacing);
        staircase(&mut path, to, spacing, Some(&mut rng));
    }
    path
}
