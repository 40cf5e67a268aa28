use gff2dlab::interlacements::{
    isomorphism_samples, loc_uniq, loc_uniq_lambda, InterlacementError, InterlacementSample, InterlacementSpace,
};
use gff2dlab::lattice::{ball, capacity, equilibrium_measure, hitting_probability, neighbours, Point, WalkModel, Window};
use gff2dlab::stats::{ks_two_sample, mean_stderr, proportion};

#[test]
fn backward_kernel_is_the_escape_transform() {
    for window in [Window::boxed(24).unwrap(), Window::torus(24).unwrap()] {
        let model = WalkModel::new(7).unwrap();
        let anchor = ball([1, 0], 2.5);
        let space = InterlacementSpace::new(&model, &window, &anchor).unwrap();
        let h = hitting_probability(&model, &window, &anchor, &[]).unwrap();
        let eq = equilibrium_measure(&model, &window, &anchor, &[]).unwrap();
        let escape = |p: Point| window.index(p).map_or(1.0, |i| 1.0 - h.values[i]);
        for (&x, &e) in eq.support.iter().zip(&eq.weights) {
            let raw: Vec<f64> = neighbours(x).iter().map(|&y| 0.25 * escape(y)).chain([model.killing_rate()]).collect();
            let total: f64 = raw.iter().sum();
            // The no-return rate out of x is its equilibrium weight.
            assert!((total - e).abs() < 1e-12);
            let kernel = space.backward_kernel(x);
            for (k, r) in kernel.iter().zip(&raw) {
                assert!((k - r / total).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn trajectories_are_nearest_neighbour_and_avoid_the_anchor_before_entry() {
    let model = WalkModel::new(10).unwrap();
    let window = Window::torus(48).unwrap();
    let anchor = ball([0, 0], 3.0);
    let space = InterlacementSpace::new(&model, &window, &anchor).unwrap();
    let s = space.sample(3.0, 8, 0).unwrap();
    assert!(!s.trajectories.is_empty());
    for t in &s.trajectories {
        assert_eq!(t.path.len(), t.holding.len());
        assert!(anchor.contains(&t.path[t.entry]));
        assert!(t.path[..t.entry].iter().all(|p| !anchor.contains(p)));
        assert!(t.holding.iter().all(|&h| h > 0.0));
        assert!(t.label > 0.0 && t.label <= 3.0);
        for w in t.path.windows(2) {
            let d = [(w[1][0] - w[0][0]).rem_euclid(48), (w[1][1] - w[0][1]).rem_euclid(48)];
            assert!(matches!(d, [1, 0] | [47, 0] | [0, 1] | [0, 47]), "{:?} -> {:?}", w[0], w[1]);
        }
    }
}

#[test]
fn vacancy_and_count_laws() {
    let model = WalkModel::new(16).unwrap();
    let window = Window::torus(96).unwrap();
    let anchor = ball([0, 0], 3.0);
    let target = [[0, 0], [1, 0]];
    let space = InterlacementSpace::new(&model, &window, &anchor).unwrap();
    let cap_target = capacity(&model, &window, &target, &[]).unwrap();
    let u = 1.0 / cap_target;
    let n = 4000u64;
    let mut vacant = 0;
    let mut counts = Vec::new();
    for k in 0..n {
        let s = space.sample(u, 17, k).unwrap();
        vacant += u64::from(!s.hits(&target));
        counts.push(s.trajectories.len() as f64);
    }
    let (p, se) = proportion(vacant, n);
    assert!((p - (-1f64).exp()).abs() < 4.0 * se, "P(vacant) = {p} ± {se}");
    let (mean, mean_se) = mean_stderr(&counts);
    assert!((mean - u * space.capacity()).abs() < 4.0 * mean_se);
}

#[test]
fn lower_levels_thin_the_cloud() {
    let model = WalkModel::new(8).unwrap();
    let window = Window::boxed(32).unwrap();
    let space = InterlacementSpace::new(&model, &window, &ball([0, 0], 2.0)).unwrap();
    let s = space.sample(5.0, 2, 4).unwrap();
    let low = s.at_level(2.0);
    assert!(low.trajectories.iter().all(|t| t.label <= 2.0 && s.trajectories.contains(t)));
    assert!(low.visited().is_subset(&s.visited()));
    let occ = s.occupation();
    assert!((occ.iter().sum::<f64>() - s.trajectories.iter().flat_map(|t| &t.holding).sum::<f64>()).abs() < 1e-9);
    assert_eq!(s, space.sample(5.0, 2, 4).unwrap());
}

#[test]
fn local_uniqueness_cases() {
    let model = WalkModel::new(8).unwrap();
    let window = Window::torus(64).unwrap();
    let space = InterlacementSpace::new(&model, &window, &ball([0, 0], 1.0)).unwrap();
    let empty = InterlacementSample { trajectories: Vec::new(), ..space.sample(1.0, 0, 0).unwrap() };
    assert!(loc_uniq(&empty, [0, 0], 4.0, 2.0).unwrap());
    let mut s = space.sample(2.0, 5, 1).unwrap();
    s.trajectories.truncate(1);
    assert!(loc_uniq(&s, [0, 0], 4.0, 2.0).unwrap(), "one trajectory is connected");
    assert!(matches!(loc_uniq(&s, [0, 0], 20.0, 2.0), Err(InterlacementError::Geometry { .. })));
    assert_eq!(loc_uniq_lambda(64, 40.0, 3.0), 3.0);
    assert!(loc_uniq_lambda(1 << 20, 16.0, 3.0) >= 2.0);
}

#[test]
fn isomorphism_sides_agree_without_shift() {
    let model = WalkModel::new(8).unwrap();
    let window = Window::boxed(16).unwrap();
    let (lhs, rhs) = isomorphism_samples(&model, &window, 0.0, 0.0, 4000, 3).unwrap();
    assert!(ks_two_sample(&lhs, &rhs).passed);
    assert!(matches!(space_error(), Err(InterlacementError::BadLevel(_))));
}

fn space_error() -> Result<InterlacementSample, InterlacementError> {
    let model = WalkModel::new(8).unwrap();
    let window = Window::boxed(16).unwrap();
    InterlacementSpace::whole_window(&model, &window)?.sample(0.0, 0, 0)
}
