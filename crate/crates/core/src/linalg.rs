//! Small dense complex linear algebra helpers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative pivot threshold below which a Hermitian matrix is treated as singular.
const PIVOT_TOLERANCE: f64 = 1e-12;

/// Lower-triangular factor `L` with `A = L Lᴴ` for a Hermitian positive definite `A`.
#[derive(Debug, Clone)]
pub struct HermitianCholesky {
    lower: DMatrix<Complex64>,
}

impl HermitianCholesky {
    /// Factors `a`, reading only its lower triangle.
    ///
    /// Fails with [`Error::SingularMatrix`] when a pivot drops below
    /// `1e-12 · max|a_ii|` (or the matrix is all-zero).
    pub fn new(a: &DMatrix<Complex64>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::InvalidArgument(format!(
                "cannot factor a {}x{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        let scale = (0..n).map(|i| a[(i, i)].re.abs()).fold(0.0, f64::max);
        let floor = PIVOT_TOLERANCE * scale;

        let mut lower = DMatrix::<Complex64>::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)].re;
            for k in 0..j {
                diag -= lower[(j, k)].norm_sqr();
            }
            if !(diag > floor) {
                return Err(Error::SingularMatrix(format!(
                    "pivot {j} is {diag:.3e}; add nonzero diagonal loading"
                )));
            }
            let ljj = diag.sqrt();
            lower[(j, j)] = Complex64::new(ljj, 0.0);
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= lower[(i, k)] * lower[(j, k)].conj();
                }
                lower[(i, j)] = s / ljj;
            }
        }
        Ok(Self { lower })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<Complex64>) -> DVector<Complex64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "right-hand side length mismatch");
        let l = &self.lower;
        // forward: L y = b
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        // backward: Lᴴ x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[(k, i)].conj() * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    /// `bᴴ A⁻¹ b`, real and positive for `b ≠ 0`.
    ///
    /// Computed as `‖L⁻¹ b‖²`, which only needs the forward sweep.
    pub fn inverse_quadratic_form(&self, b: &DVector<Complex64>) -> f64 {
        let n = self.dim();
        assert_eq!(b.len(), n, "vector length mismatch");
        let l = &self.lower;
        let mut y = b.clone();
        let mut acc = 0.0;
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
            acc += y[i].norm_sqr();
        }
        acc
    }
}

/// Largest entrywise modulus of `a − b`.
pub fn max_abs_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// `vᴴ A v` for Hermitian `A`, real part.
pub fn hermitian_form(a: &DMatrix<Complex64>, v: &DVector<Complex64>) -> f64 {
    v.dotc(&(a * v)).re
}
