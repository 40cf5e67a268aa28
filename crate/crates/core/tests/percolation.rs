use std::collections::VecDeque;

use gff2dlab::gff::{FieldSampler, SamplingMethod};
use gff2dlab::lattice::spectral::TorusGreen;
use gff2dlab::lattice::{WalkModel, Window};
use gff2dlab::percolation::{
    coupled_outcomes, edge_seed, edge_uniform, estimate_theta, one_arm, open_edge_prob, percolate, LevelSetConfig,
    PercolationError,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

/// Cluster id per site by breadth-first search over edges opened afresh
/// from the field and the edge uniforms.
fn flood_fill(values: &[f64], window: &Window, level: f64, seed: u64, conductance: f64) -> Vec<Option<usize>> {
    let side = window.side;
    let open = |i: usize, j: usize, dir: u8, from: usize| {
        values[i] >= level
            && values[j] >= level
            && edge_uniform(seed, window.point(from), dir) < open_edge_prob(values[i] - level, values[j] - level, conductance)
    };
    let mut ids = vec![None; values.len()];
    let mut next = 0;
    for start in 0..values.len() {
        if values[start] < level || ids[start].is_some() {
            continue;
        }
        ids[start] = Some(next);
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % side, i / side);
            let east = y * side + (x + 1) % side;
            let west = y * side + (x + side - 1) % side;
            let north = ((y + 1) % side) * side + x;
            let south = ((y + side - 1) % side) * side + x;
            for (j, dir, from) in [(east, 1, i), (west, 1, west), (north, 2, i), (south, 2, south)] {
                if ids[j].is_none() && open(i, j, dir, from) {
                    ids[j] = Some(next);
                    queue.push_back(j);
                }
            }
        }
        next += 1;
    }
    ids
}

#[test]
fn labeling_matches_flood_fill() {
    let model = WalkModel::new(6).unwrap();
    let window = Window::torus(40).unwrap();
    let sampler = FieldSampler::new(&model, &window, SamplingMethod::Spectral).unwrap();
    for k in 0..6 {
        let field = sampler.sample(21, k);
        for level in [-0.5, 0.0, 0.7] {
            let labels = percolate(&field, level, 99 + k);
            let oracle = flood_fill(&field.values, &window, level.abs(), 99 + k, model.edge_conductance());
            // Both number clusters by first appearance, so ids agree exactly.
            let ours: Vec<Option<usize>> = labels.labels.iter().map(|l| l.map(|v| v as usize)).collect();
            assert_eq!(ours, oracle);
        }
    }
}

#[test]
fn coupled_run_replays_per_sample() {
    let config = LevelSetConfig::new(0.0, 8, 4, 12, 5).unwrap();
    let levels = [0.0, 0.3, 0.9];
    let outcomes = coupled_outcomes(&config, &levels).unwrap();
    let model = WalkModel::new(8).unwrap();
    let sampler = FieldSampler::new(&model, &config.window, config.method).unwrap();
    for (k, &bits) in outcomes.iter().enumerate() {
        let field = sampler.sample(config.seed, k as u64);
        for (l, &a) in levels.iter().enumerate() {
            let labels = percolate(&field, a, edge_seed(config.seed, k as u64));
            assert_eq!(bits >> l & 1 == 1, one_arm(&labels, config.radius).unwrap(), "sample {k}, level {a}");
        }
        // Raising the level can only close connections.
        assert!(bits & 0b110 == 0 || bits & 1 == 1);
        assert!(bits & 0b100 == 0 || bits & 0b010 != 0);
    }
    assert_eq!(outcomes, coupled_outcomes(&config, &levels).unwrap());
}

#[test]
fn sign_clusters_follow_arcsine_law() {
    // P(x and y in one cluster of {φ ≥ 0}) = arcsin(ρ)/π, ρ the correlation.
    let model = WalkModel::new(8).unwrap();
    let window = Window::torus(32).unwrap();
    let table = TorusGreen::new(&model, 32);
    let sampler = FieldSampler::new(&model, &window, SamplingMethod::Spectral).unwrap();
    let (x, y) = ([0, 0], [2, 1]);
    let n = 20_000u64;
    let together = (0..n)
        .filter(|&k| {
            let labels = percolate(&sampler.sample(31, k), 0.0, edge_seed(32, k));
            labels.label(x).is_some() && labels.label(x) == labels.label(y)
        })
        .count() as f64;
    let p = together / n as f64;
    let rho = table.at(x, y) / table.at(x, x);
    let want = rho.asin() / std::f64::consts::PI;
    let se = (want * (1.0 - want) / n as f64).sqrt();
    assert!((p - want).abs() < 4.0 * se, "{p} vs {want} ± {se}");
}

#[test]
fn radius_one_matches_five_point_oracle() {
    // At R = 1 the arm only needs one open edge from the origin, so θ is an
    // expectation over (φ₀, four neighbours) drawn from their exact 5×5
    // covariance. Conditioning on the values gives it without edge noise.
    let abar = 0.3;
    let mut config = LevelSetConfig::new(abar, 8, 4, 20_000, 17).unwrap();
    config.radius = 1;
    let est = estimate_theta(&config).unwrap();

    let model = WalkModel::new(8).unwrap();
    let table = TorusGreen::new(&model, config.window.side);
    let sites: [[i64; 2]; 5] = [[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]];
    let cov = DMatrix::from_fn(5, 5, |i, j| table.at(sites[i], sites[j]));
    let chol = cov.cholesky().unwrap();
    let mut rng = rand::rngs::StdRng::seed_from_u64(5);
    let n = 200_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| {
            let z = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let phi = chol.l() * z;
            if phi[0] < abar {
                return 0.0;
            }
            let closed: f64 = (1..5).map(|i| 1.0 - open_edge_prob(phi[0] - abar, phi[i] - abar, model.edge_conductance())).product();
            1.0 - closed
        })
        .collect();
    let (want, want_se) = gff2dlab::stats::mean_stderr(&draws);
    let se = (est.stderr.powi(2) + want_se.powi(2)).sqrt();
    assert!((est.p_hat - want).abs() < 3.0 * se, "{} vs {want} ± {se}", est.p_hat);
}

#[test]
fn trivial_levels() {
    let model = WalkModel::new(6).unwrap();
    let window = Window::torus(24).unwrap();
    let field = FieldSampler::new(&model, &window, SamplingMethod::Spectral).unwrap().sample(2, 0);
    let top = field.values.iter().cloned().fold(f64::MIN, f64::max);
    let labels = percolate(&field, top + 1.0, 1);
    assert_eq!(labels.cluster_count(), 0);
    assert!(!one_arm(&labels, 5).unwrap());
    // An unmarked origin never has an arm, whatever the edges do.
    let origin = field.values[window.index([0, 0]).unwrap()];
    let labels = percolate(&field, origin.abs() + 1e-9, 1);
    assert!(origin >= 0.0 || !one_arm(&labels, 1).unwrap());
    assert!(labels.label([0, 0]).is_none());
}

#[test]
fn theta_is_a_proportion_with_binomial_error() {
    let config = LevelSetConfig::new(0.2, 8, 4, 400, 3).unwrap();
    let est = estimate_theta(&config).unwrap();
    assert_eq!(est.n_samples, 400);
    assert_eq!(est.p_hat, est.hits as f64 / 400.0);
    assert!((est.stderr - (est.p_hat * (1.0 - est.p_hat) / 400.0).sqrt()).abs() < 1e-15);
}

#[test]
fn bad_configurations() {
    assert!(matches!(LevelSetConfig::new(0.0, 8, 4, 0, 1), Err(PercolationError::NoSamples)));
    assert!(matches!(LevelSetConfig::new(0.0, 8, 1, 10, 1), Err(PercolationError::BadRadius { .. })));
    let config = LevelSetConfig::new(0.0, 4, 4, 10, 1).unwrap();
    assert!(matches!(coupled_outcomes(&config, &[0.0; 65]), Err(PercolationError::TooManyLevels(65))));
}

proptest! {
    #[test]
    fn edge_probability_is_monotone(u in 0.0f64..5.0, v in 0.0f64..5.0, du in 0.0f64..1.0, c in 0.01f64..2.0) {
        let p = open_edge_prob(u, v, c);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(open_edge_prob(u + du, v, c) >= p);
        prop_assert_eq!(open_edge_prob(-u - 1e-9, v, c), 0.0);
        prop_assert!((open_edge_prob(u, v, c) - open_edge_prob(v, u, c)).abs() < 1e-15);
    }

    #[test]
    fn edge_uniforms_are_keyed(seed in any::<u64>(), x in -1000i64..1000, y in -1000i64..1000) {
        let u = edge_uniform(seed, [x, y], 1);
        prop_assert!((0.0..1.0).contains(&u));
        prop_assert_eq!(u, edge_uniform(seed, [x, y], 1));
        prop_assert_ne!(u, edge_uniform(seed, [x, y], 2));
    }
}
