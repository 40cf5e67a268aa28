//! Banded Cholesky factorization of a non-periodic five-point operator.
//!
//! Row-major ordering gives half-bandwidth `nx`, so factoring costs
//! `O(nx² · n)` and storage `O(nx · n)`.

use super::stencil::Stencil;
use super::LatticeError;

/// `A = L Lᵀ` with `L` lower triangular of half-bandwidth `band`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    band: usize,
    /// Row `i` holds `L[i][i − band ..= i]` (entries before column 0 unused).
    rows: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(op: &Stencil) -> Result<Self, LatticeError> {
        if op.periodic {
            return Err(LatticeError::Unsupported("banded factorization of a periodic operator".into()));
        }
        let n = op.len();
        let band = op.nx;
        let width = band + 1;
        let mut rows = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in op.row(i) {
                if j <= i {
                    rows[i * width + band - (i - j)] = v;
                }
            }
        }
        for i in 0..n {
            let first = i.saturating_sub(band);
            for j in first..=i {
                let start = first.max(j.saturating_sub(band));
                let mut s = rows[i * width + band - (i - j)];
                let ri = &rows[i * width + band - (i - start)..i * width + band - (i - j)];
                let rj = &rows[j * width + band - (j - start)..j * width + band];
                s -= ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>();
                if j == i {
                    if s <= 0.0 {
                        return Err(LatticeError::Unsupported(format!("matrix not positive definite at row {i}")));
                    }
                    rows[i * width + band] = s.sqrt();
                } else {
                    rows[i * width + band - (i - j)] = s / rows[j * width + band];
                }
            }
        }
        Ok(Self { n, band, rows })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.rows[i * (self.band + 1) + self.band - (i - j)]
    }

    /// Solves `L z = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let first = i.saturating_sub(self.band);
            let mut s = b[i];
            for j in first..i {
                s -= self.l(i, j) * b[j];
            }
            b[i] = s / self.l(i, i);
        }
    }

    /// Solves `Lᵀ x = z` in place.
    pub fn backward(&self, z: &mut [f64]) {
        for i in (0..self.n).rev() {
            z[i] /= self.l(i, i);
            let zi = z[i];
            let first = i.saturating_sub(self.band);
            for j in first..i {
                z[j] -= self.l(i, j) * zi;
            }
        }
    }

    pub fn solve(&self, b: &mut [f64]) {
        self.forward(b);
        self.backward(b);
    }
}
