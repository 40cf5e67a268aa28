//! Fourier diagonalization of the walk operator on a torus.

use std::f64::consts::PI;

use std::sync::Arc;

use rustfft::num_complex::{Complex, Complex64};
use rustfft::{Fft, FftNum, FftPlanner};

use super::{Point, WalkModel, Window};

/// Eigenvalue of `Q` on an `side × side` torus for wave numbers `(k1, k2)`:
/// `λ − ½(cos 2πk1/side + cos 2πk2/side)`.
pub fn symbol(model: &WalkModel, side: usize, k1: usize, k2: usize) -> f64 {
    let s = side as f64;
    // 1 − ½(cos a + cos b) = sin²(a/2) + sin²(b/2), exact near the zero mode.
    model.killing_rate() + (PI * k1 as f64 / s).sin().powi(2) + (PI * k2 as f64 / s).sin().powi(2)
}

/// A planned square 2D FFT.
pub struct Fft2<T: FftNum> {
    side: usize,
    fft: Arc<dyn Fft<T>>,
}

impl<T: FftNum> Fft2<T> {
    pub fn new(side: usize, inverse: bool) -> Self {
        let mut planner = FftPlanner::new();
        let fft = if inverse { planner.plan_fft_inverse(side) } else { planner.plan_fft_forward(side) };
        Self { side, fft }
    }

    /// Transforms a row-major array in place (unnormalized). With
    /// `transposed_output` the result is left transposed, which saves a pass
    /// when the caller does not care about orientation.
    pub fn process(&self, buf: &mut [Complex<T>], transposed_output: bool) {
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.fft.get_inplace_scratch_len()];
        self.fft.process_with_scratch(buf, &mut scratch);
        transpose(buf, self.side);
        self.fft.process_with_scratch(buf, &mut scratch);
        if !transposed_output {
            transpose(buf, self.side);
        }
    }
}

/// In-place 2D FFT of a row-major `side × side` array (unnormalized).
pub fn fft2(buf: &mut [Complex64], side: usize, inverse: bool) {
    Fft2::new(side, inverse).process(buf, false);
}

/// In-place transpose of a square row-major array, in cache-sized tiles.
fn transpose<T: Copy>(buf: &mut [T], side: usize) {
    const TILE: usize = 32;
    for by in (0..side).step_by(TILE) {
        for bx in (by..side).step_by(TILE) {
            for y in by..(by + TILE).min(side) {
                let start = if bx == by { y + 1 } else { bx };
                for x in start..(bx + TILE).min(side) {
                    buf.swap(y * side + x, x * side + y);
                }
            }
        }
    }
}

/// Green's function of the walk on a torus, `g(0, d)` for every
/// displacement `d`, row-major over `d mod side`.
#[derive(Debug, Clone)]
pub struct TorusGreen {
    side: usize,
    table: Vec<f64>,
}

impl TorusGreen {
    pub fn new(model: &WalkModel, side: usize) -> Self {
        let mut buf: Vec<Complex64> = (0..side * side)
            .map(|i| Complex64::new(1.0 / symbol(model, side, i % side, i / side), 0.0))
            .collect();
        fft2(&mut buf, side, true);
        let scale = 1.0 / (side * side) as f64;
        Self { side, table: buf.iter().map(|c| c.re * scale).collect() }
    }

    pub fn for_window(model: &WalkModel, window: &Window) -> Self {
        Self::new(model, window.side)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn at(&self, x: Point, y: Point) -> f64 {
        let s = self.side as i64;
        let dx = (x[0] - y[0]).rem_euclid(s) as usize;
        let dy = (x[1] - y[1]).rem_euclid(s) as usize;
        self.table[dy * self.side + dx]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_round_trip() {
        let side = 37;
        let orig: Vec<usize> = (0..side * side).collect();
        let mut t = orig.clone();
        transpose(&mut t, side);
        assert_eq!(t[3 * side + 5], orig[5 * side + 3]);
        transpose(&mut t, side);
        assert_eq!(t, orig);
    }

    #[test]
    fn table_inverts_operator() {
        let model = WalkModel::new(3).unwrap();
        let side = 10;
        let g = TorusGreen::new(&model, side);
        // (Q g)(0, ·) = δ₀
        for y in 0..side as i64 {
            for x in 0..side as i64 {
                let p = [x, y];
                let lap: f64 = super::super::neighbours(p).iter().map(|&q| g.at(q, [0, 0])).sum();
                let v = model.total_rate() * g.at(p, [0, 0]) - 0.25 * lap;
                let expect = if x == 0 && y == 0 { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12);
            }
        }
        assert!((g.at([2, 3], [0, 0]) - g.at([3, 2], [0, 0])).abs() < 1e-14);
    }
}
