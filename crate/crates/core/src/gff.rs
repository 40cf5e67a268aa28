//! Exact samplers for the massive free field on a window, and the Markov
//! decomposition `φ = η^K + ψ^K` with respect to a set `K`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex32;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::spectral::{symbol, Fft2};
use crate::lattice::{
    indices_of, window_neighbours, BandedCholesky, DirichletSolver, LatticeError, Point, SolverConfig, Stencil,
    WalkModel, Window,
};
use crate::rng;

/// Largest box side the banded factorization accepts (band storage is `side³` doubles).
pub const FACTOR_MAX_BOX_SIDE: usize = 256;
/// Largest torus side factored densely.
pub const FACTOR_MAX_TORUS_SIDE: usize = 48;

#[derive(Debug, Error)]
pub enum GffError {
    #[error("spectral sampling needs a torus window")]
    SpectralOnBox,
    #[error("factorization of a side-{side} {kind} needs about {bytes} bytes; use the spectral method on a torus")]
    TooLarge { side: usize, kind: &'static str, bytes: u64 },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMethod {
    Factorization,
    Spectral,
}

/// A sampled field on a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub window: Window,
    pub model: WalkModel,
    pub values: Vec<f64>,
    pub seed: u64,
    pub method: SamplingMethod,
}

impl Field {
    pub fn at(&self, p: Point) -> Option<f64> {
        self.window.index(p).map(|i| self.values[i])
    }
}

enum Engine {
    Banded(BandedCholesky),
    /// Upper Cholesky factor `Lᵀ` of the dense precision matrix.
    Dense(DMatrix<f64>),
    /// Single precision: the transform dominates Monte Carlo cost and the
    /// rounding error (~1e-7 relative) is far below sampling noise.
    Spectral { amplitude: Vec<f32>, fft: Fft2<f32> },
}

/// A reusable sampler. Sample `k` of seed `s` is a pure function of `(s, k)`.
pub struct FieldSampler {
    model: WalkModel,
    window: Window,
    method: SamplingMethod,
    engine: Engine,
}

impl FieldSampler {
    pub fn new(model: &WalkModel, window: &Window, method: SamplingMethod) -> Result<Self, GffError> {
        let side = window.side;
        let engine = match method {
            SamplingMethod::Spectral => {
                if !window.is_periodic() {
                    return Err(GffError::SpectralOnBox);
                }
                let scale = 1.0 / side as f64;
                let amplitude = (0..side * side)
                    .map(|i| (scale / symbol(model, side, i % side, i / side).sqrt()) as f32)
                    .collect();
                Engine::Spectral { amplitude, fft: Fft2::new(side, false) }
            }
            SamplingMethod::Factorization if window.is_periodic() => {
                if side > FACTOR_MAX_TORUS_SIDE {
                    let n = (side * side) as u64;
                    return Err(GffError::TooLarge { side, kind: "torus", bytes: 8 * n * n });
                }
                let op = Stencil::walk(model, window, &vec![false; window.len()]);
                let n = window.len();
                let mut q = DMatrix::zeros(n, n);
                for i in 0..n {
                    for (j, v) in op.row(i) {
                        q[(i, j)] += v;
                    }
                }
                let chol = q.cholesky().ok_or(LatticeError::Unsupported("precision not positive definite".into()))?;
                Engine::Dense(chol.l().transpose())
            }
            SamplingMethod::Factorization => {
                if side > FACTOR_MAX_BOX_SIDE {
                    let bytes = 8 * (side as u64).pow(3);
                    return Err(GffError::TooLarge { side, kind: "box", bytes });
                }
                let op = Stencil::walk(model, window, &vec![false; window.len()]);
                Engine::Banded(BandedCholesky::factor(&op)?)
            }
        };
        Ok(Self { model: *model, window: *window, method, engine })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn method(&self) -> SamplingMethod {
        self.method
    }

    fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Two independent fields from one stream (the spectral method produces
    /// them as real and imaginary parts of one transform).
    pub fn sample_pair(&self, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        self.sample_pair_into(rng, &mut a, &mut b);
        (a, b)
    }

    /// As [`sample_pair`](Self::sample_pair), reusing the output buffers.
    pub fn sample_pair_into(&self, rng: &mut impl Rng, first: &mut Vec<f64>, second: &mut Vec<f64>) {
        match &self.engine {
            Engine::Spectral { amplitude, fft } => {
                let mut buf: Vec<Complex32> = amplitude
                    .iter()
                    .map(|a| {
                        let re: f32 = rng.sample(StandardNormal);
                        let im: f32 = rng.sample(StandardNormal);
                        Complex32::new(a * re, a * im)
                    })
                    .collect();
                // The amplitude is symmetric under swapping axes, so a
                // transposed output has the same law.
                fft.process(&mut buf, true);
                first.clear();
                first.extend(buf.iter().map(|c| c.re as f64));
                second.clear();
                second.extend(buf.iter().map(|c| c.im as f64));
            }
            _ => {
                *first = self.sample_one(rng);
                *second = self.sample_one(rng);
            }
        }
    }

    fn sample_one(&self, rng: &mut impl Rng) -> Vec<f64> {
        let n = self.window.len();
        match &self.engine {
            Engine::Banded(chol) => {
                let mut w = Self::normals(rng, n);
                chol.backward(&mut w);
                w
            }
            Engine::Dense(upper) => {
                let w = nalgebra::DVector::from_vec(Self::normals(rng, n));
                let x = upper.solve_upper_triangular(&w).expect("non-singular factor");
                x.iter().copied().collect()
            }
            Engine::Spectral { .. } => self.sample_pair(rng).0,
        }
    }

    /// Sample `index` of run `seed`: samples `2j` and `2j + 1` share stream `j`.
    pub fn sample(&self, seed: u64, index: u64) -> Field {
        let mut stream = rng::stream(seed, index / 2);
        let (even, odd) = self.sample_pair(&mut stream);
        let values = if index % 2 == 0 { even } else { odd };
        Field { window: self.window, model: self.model, values, seed, method: self.method }
    }
}

/// Sample 0 of run `seed`.
pub fn sample_field(model: &WalkModel, window: &Window, seed: u64, method: SamplingMethod) -> Result<Field, GffError> {
    Ok(FieldSampler::new(model, window, method)?.sample(seed, 0))
}

/// `φ = η + ψ` with `η` the harmonic extension of `φ|_K` and `ψ = 0` on `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub eta: Vec<f64>,
    pub psi: Vec<f64>,
    pub anchor_set: Vec<Point>,
}

/// Reusable harmonic-extension operator for a fixed anchor set.
pub struct Decomposer {
    window: Window,
    anchor: Vec<usize>,
    anchor_points: Vec<Point>,
    solver: Option<DirichletSolver>,
    conductance: f64,
}

impl Decomposer {
    pub fn new(model: &WalkModel, window: &Window, anchor: &[Point]) -> Result<Self, LatticeError> {
        let idx = indices_of(window, anchor)?;
        let solver = if idx.is_empty() {
            None
        } else {
            let mut pinned = vec![false; window.len()];
            for &i in &idx {
                pinned[i] = true;
            }
            Some(DirichletSolver::new(model, window, &pinned, SolverConfig::default())?)
        };
        Ok(Self {
            window: *window,
            anchor_points: idx.iter().map(|&i| window.point(i)).collect(),
            anchor: idx,
            solver,
            conductance: model.edge_conductance(),
        })
    }

    pub fn decompose(&self, values: &[f64]) -> Result<Decomposition, LatticeError> {
        let n = self.window.len();
        let Some(solver) = &self.solver else {
            return Ok(Decomposition { eta: vec![0.0; n], psi: values.to_vec(), anchor_set: Vec::new() });
        };
        let mut rhs = vec![0.0; n];
        for &i in &self.anchor {
            for j in window_neighbours(&self.window, i) {
                if !solver.is_pinned(j) {
                    rhs[j] += self.conductance * values[i];
                }
            }
        }
        let mut eta = solver.solve(&rhs)?.values;
        for &i in &self.anchor {
            eta[i] = values[i];
        }
        let psi = values.iter().zip(&eta).map(|(f, e)| f - e).collect();
        Ok(Decomposition { eta, psi, anchor_set: self.anchor_points.clone() })
    }
}

pub fn decompose(field: &Field, anchor: &[Point]) -> Result<Decomposition, LatticeError> {
    Decomposer::new(&field.model, &field.window, anchor)?.decompose(&field.values)
}
