use gff2dlab::gff::{decompose, Decomposer, FieldSampler, SamplingMethod};
use gff2dlab::lattice::spectral::TorusGreen;
use gff2dlab::lattice::{green, neighbours, Point, WalkModel, Window};
use gff2dlab::rng;

/// Empirical covariances at the given pairs, with the SE of a Gaussian
/// product moment `√((g_xx g_yy + g_xy²)/n)`.
fn covariance_z(samples: &[Vec<f64>], window: &Window, pairs: &[(Point, Point)], exact: impl Fn(Point, Point) -> f64) -> f64 {
    let n = samples.len() as f64;
    pairs
        .iter()
        .map(|&(x, y)| {
            let (ix, iy) = (window.index(x).unwrap(), window.index(y).unwrap());
            let emp = samples.iter().map(|s| s[ix] * s[iy]).sum::<f64>() / n;
            let se = ((exact(x, x) * exact(y, y) + exact(x, y).powi(2)) / n).sqrt();
            ((emp - exact(x, y)) / se).abs()
        })
        .fold(0.0, f64::max)
}

const PAIRS: [(Point, Point); 5] =
    [([0, 0], [0, 0]), ([0, 0], [1, 0]), ([0, 0], [3, 2]), ([-5, 4], [2, -3]), ([7, 7], [-8, -8])];

fn draw(sampler: &FieldSampler, n: u64, seed: u64) -> Vec<Vec<f64>> {
    (0..n / 2)
        .flat_map(|k| {
            let (a, b) = sampler.sample_pair(&mut rng::stream(seed, k));
            [a, b]
        })
        .collect()
}

#[test]
fn torus_samplers_have_green_covariance() {
    let model = WalkModel::new(4).unwrap();
    let window = Window::torus(16).unwrap();
    let table = TorusGreen::new(&model, 16);
    for (method, seed) in [(SamplingMethod::Spectral, 1), (SamplingMethod::Factorization, 2)] {
        let sampler = FieldSampler::new(&model, &window, method).unwrap();
        let z = covariance_z(&draw(&sampler, 40_000, seed), &window, &PAIRS, |x, y| table.at(x, y));
        assert!(z < 4.0, "{method:?}: max |z| = {z}");
    }
}

#[test]
fn box_sampler_has_green_covariance() {
    let model = WalkModel::new(6).unwrap();
    let window = Window::boxed(18).unwrap();
    let sampler = FieldSampler::new(&model, &window, SamplingMethod::Factorization).unwrap();
    let z = covariance_z(&draw(&sampler, 40_000, 3), &window, &PAIRS, |x, y| green(&model, &window, x, y).unwrap());
    assert!(z < 4.0, "max |z| = {z}");
}

#[test]
fn pair_components_are_uncorrelated() {
    let model = WalkModel::new(4).unwrap();
    let window = Window::torus(16).unwrap();
    let sampler = FieldSampler::new(&model, &window, SamplingMethod::Spectral).unwrap();
    let g = TorusGreen::new(&model, 16).at([0, 0], [0, 0]);
    let i = window.index([0, 0]).unwrap();
    let n = 20_000;
    let cross: f64 = (0..n)
        .map(|k| {
            let (a, b) = sampler.sample_pair(&mut rng::stream(4, k));
            a[i] * b[i]
        })
        .sum::<f64>()
        / n as f64;
    assert!(cross.abs() < 4.0 * g / (n as f64).sqrt());
}

#[test]
fn sampling_is_reproducible() {
    let model = WalkModel::new(8).unwrap();
    let window = Window::torus(32).unwrap();
    let sampler = FieldSampler::new(&model, &window, SamplingMethod::Spectral).unwrap();
    assert_eq!(sampler.sample(5, 3), sampler.sample(5, 3));
    assert_ne!(sampler.sample(5, 3).values, sampler.sample(5, 2).values);
    assert_ne!(sampler.sample(5, 3).values, sampler.sample(6, 3).values);
    // Samples 2j and 2j + 1 are the two halves of pair j.
    let (a, b) = sampler.sample_pair(&mut rng::stream(5, 1));
    assert_eq!((sampler.sample(5, 2).values, sampler.sample(5, 3).values), (a, b));
}

#[test]
fn decomposition_is_harmonic_off_the_anchor() {
    let model = WalkModel::new(5).unwrap();
    let window = Window::boxed(20).unwrap();
    let anchor: Vec<Point> = vec![[0, 0], [1, 0], [-4, 6], [5, -5]];
    let field = FieldSampler::new(&model, &window, SamplingMethod::Factorization).unwrap().sample(9, 0);
    let d = decompose(&field, &anchor).unwrap();
    let lambda = model.total_rate();
    for i in 0..window.len() {
        let p = window.point(i);
        assert!((d.eta[i] + d.psi[i] - field.values[i]).abs() < 1e-12);
        if anchor.contains(&p) {
            assert_eq!(d.psi[i], 0.0);
            continue;
        }
        let around: f64 = neighbours(p).iter().filter_map(|&q| window.index(q)).map(|j| d.eta[j]).sum();
        assert!((lambda * d.eta[i] - 0.25 * around).abs() < 1e-11);
    }
}

#[test]
fn empty_anchor_leaves_field_alone() {
    let model = WalkModel::new(5).unwrap();
    let window = Window::boxed(8).unwrap();
    let d = Decomposer::new(&model, &window, &[]).unwrap();
    let values: Vec<f64> = (0..window.len()).map(|i| i as f64).collect();
    let out = d.decompose(&values).unwrap();
    assert_eq!(out.psi, values);
    assert!(out.eta.iter().all(|&v| v == 0.0));
}

#[test]
fn psi_is_uncorrelated_with_anchor_values() {
    let model = WalkModel::new(6).unwrap();
    let window = Window::boxed(12).unwrap();
    let anchor = [[0, 0], [2, 1]];
    let decomposer = Decomposer::new(&model, &window, &anchor).unwrap();
    let sampler = FieldSampler::new(&model, &window, SamplingMethod::Factorization).unwrap();
    let (ia, ix) = (window.index([0, 0]).unwrap(), window.index([-3, 2]).unwrap());
    let n = 20_000;
    let mut sum = 0.0;
    for f in draw(&sampler, n, 11) {
        sum += decomposer.decompose(&f).unwrap().psi[ix] * f[ia];
    }
    let scale = (green(&model, &window, [0, 0], [0, 0]).unwrap() * green(&model, &window, [-3, 2], [-3, 2]).unwrap()).sqrt();
    assert!((sum / n as f64).abs() < 4.0 * scale / (n as f64).sqrt());
}
