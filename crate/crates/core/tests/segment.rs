use gff2dlab::bessel::EULER_GAMMA;
use gff2dlab::segment::{
    cap_reference, convergence_study, kernel, minimize_segment, project_simplex, segment_energy, tau_reference,
    SegmentError, SegmentKernel,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use std::f64::consts::PI;

/// Active-set KKT solve of `min wᵀAw` over the simplex, dense.
fn kkt(a: &DMatrix<f64>) -> (Vec<f64>, f64) {
    let n = a.nrows();
    let mut active: Vec<usize> = (0..n).collect();
    loop {
        let sub = DMatrix::from_fn(active.len(), active.len(), |i, j| a[(active[i], active[j])]);
        let x = sub.lu().solve(&DVector::from_element(active.len(), 1.0)).unwrap();
        let total = x.sum();
        let mut w = vec![0.0; n];
        for (i, &j) in active.iter().enumerate() {
            w[j] = x[i] / total;
        }
        if let Some(drop) = active.iter().position(|&j| w[j] < 0.0) {
            active.remove(drop);
            continue;
        }
        let energy = 1.0 / total;
        let aw = a * DVector::from_vec(w.clone());
        match (0..n).find(|&j| !active.contains(&j) && aw[j] < energy * (1.0 - 1e-12)) {
            Some(j) => active.push(j),
            None => return (w, energy),
        }
    }
}

#[test]
fn minimizer_matches_kkt_solution() {
    for n in [50, 200] {
        let k = SegmentKernel::new(n).unwrap();
        let a = DMatrix::from_fn(n, n, |i, j| k.entry(i, j));
        let (w, energy) = kkt(&a);
        let pg = minimize_segment(n, 1e-13).unwrap();
        let gap = w.iter().zip(&pg.weights).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-7, "n = {n}: weight gap {gap}");
        assert!((pg.energy - energy).abs() < 1e-12 * energy);
        assert_eq!(pg.tau, pg.cap / 2.0);
    }
}

#[test]
fn minimizer_is_symmetric_and_heavier_at_the_ends() {
    let pg = minimize_segment(400, 1e-13).unwrap();
    let n = pg.weights.len();
    for i in 0..n / 2 {
        assert!((pg.weights[i] - pg.weights[n - 1 - i]).abs() < 1e-9);
    }
    assert!(pg.weights[0] > 3.0 * pg.weights[n / 2]);
    assert!(pg.zero_weights().is_empty());
}

#[test]
fn self_interaction_has_log_singularity() {
    // (2/π)·average of −log|s − t| − γ over a cell: (2/π)(3/2 − log h − γ) up to O(h² log h).
    for n in [1000, 4000] {
        let h = 1.0 / n as f64;
        let k = SegmentKernel::new(n).unwrap();
        let leading = 2.0 / PI * (1.5 - h.ln() - EULER_GAMMA);
        assert!((k.row()[0] - leading).abs() < 10.0 * h * h * h.ln().abs(), "n = {n}");
        assert_eq!(k.row()[3], kernel(3.0 * h));
    }
}

#[test]
fn reference_capacity() {
    // Frozen from the n = 4000 discretization; the n = 2000 value differs by 1.04e-4.
    assert!((cap_reference() - 1.496_416_168).abs() < 1e-8);
    assert_eq!(tau_reference(), cap_reference() / 2.0);
}

#[test]
fn refinement_converges() {
    let study = convergence_study(&[100, 200, 400], 1e-13).unwrap();
    assert!(study.caps.windows(2).all(|w| w[1] < w[0]), "capacity decreases under refinement: {:?}", study.caps);
    assert!(study.order > 0.5 && study.order < 3.0, "order {}", study.order);
    assert!((study.extrapolated - cap_reference()).abs() < 5e-3);
}

#[test]
fn rejects_bad_input() {
    assert!(matches!(SegmentKernel::new(1), Err(SegmentError::TooFewCells(1))));
    assert!(matches!(minimize_segment(10, 0.0), Err(SegmentError::BadTolerance(_))));
    assert!(segment_energy(&[0.5, 0.6], 2).is_err());
    assert!(segment_energy(&[1.0], 2).is_err());
    assert!(segment_energy(&[-0.5, 1.5], 2).is_err());
}

proptest! {
    #[test]
    fn projection_lands_on_simplex_and_is_optimal(
        v in prop::collection::vec(-3.0f64..3.0, 1..40),
        q_raw in prop::collection::vec(0.0f64..1.0, 40),
    ) {
        let p = project_simplex(&v);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Variational inequality ⟨v − p, q − p⟩ ≤ 0 for any q on the simplex.
        let q: Vec<f64> = q_raw[..v.len()].iter().map(|x| x + 1e-3).collect();
        let total: f64 = q.iter().sum();
        let inner: f64 = (0..v.len()).map(|i| (v[i] - p[i]) * (q[i] / total - p[i])).sum();
        prop_assert!(inner <= 1e-10);
    }

    #[test]
    fn fft_product_matches_dense(n in 2usize..64, seed in 0u64..1000) {
        let k = SegmentKernel::new(n).unwrap();
        let x: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0 - 0.5).collect();
        let mut fast = vec![0.0; n];
        k.apply(&x, &mut fast);
        for i in 0..n {
            let dense: f64 = (0..n).map(|j| k.entry(i, j) * x[j]).sum();
            prop_assert!((fast[i] - dense).abs() < 1e-11 * (1.0 + dense.abs()));
        }
    }
}
