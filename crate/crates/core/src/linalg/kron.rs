use super::LinalgError;
use crate::scalar::Scalar;

/// Cholesky factor of a symmetric positive definite tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct Tridiagonal<T> {
    diag: Vec<T>,
    sub: Vec<T>,
}

impl<T: Scalar> Tridiagonal<T> {
    /// `diag` has length n, `off` length n-1 (symmetric off-diagonal).
    pub fn factor(diag: &[T], off: &[T]) -> Result<Self, LinalgError> {
        let n = diag.len();
        if off.len() + 1 != n.max(1) {
            return Err(LinalgError::Dimension { expected: n.saturating_sub(1), got: off.len() });
        }
        let mut l = Vec::with_capacity(n);
        let mut m = Vec::with_capacity(off.len());
        for i in 0..n {
            let mut d = diag[i];
            if i > 0 {
                let mi = off[i - 1] / l[i - 1];
                d -= mi * mi;
                m.push(mi);
            }
            if !(d > T::zero()) {
                return Err(LinalgError::NotPositiveDefinite { row: i, pivot: d.as_f64() });
            }
            l.push(d.sqrt());
        }
        Ok(Self { diag: l, sub: m })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Solves in place on a strided view `b[start + k*stride]`.
    fn solve_strided(&self, b: &mut [T], start: usize, stride: usize) {
        let n = self.dim();
        for i in 0..n {
            let mut v = b[start + i * stride];
            if i > 0 {
                v -= self.sub[i - 1] * b[start + (i - 1) * stride];
            }
            b[start + i * stride] = v / self.diag[i];
        }
        for i in (0..n).rev() {
            let mut v = b[start + i * stride];
            if i + 1 < n {
                v -= self.sub[i] * b[start + (i + 1) * stride];
            }
            b[start + i * stride] = v / self.diag[i];
        }
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        assert_eq!(b.len(), self.dim());
        self.solve_strided(b, 0, 1);
    }
}

/// Exact inverse of an operator of the form `My ⊗ Mx` acting on row-major
/// grid vectors (`x` fastest), as produced by the unit-weight Q1 mass matrix on
/// the interior nodes of a uniform tensor grid.
#[derive(Debug, Clone)]
pub struct KroneckerMass<T> {
    x: Tridiagonal<T>,
    y: Tridiagonal<T>,
}

impl<T: Scalar> KroneckerMass<T> {
    pub fn new(x: Tridiagonal<T>, y: Tridiagonal<T>) -> Self {
        Self { x, y }
    }

    /// Interior Q1 mass of a uniform `nx × ny` cell grid with spacings `hx, hy`.
    pub fn q1_interior(nx: usize, ny: usize, hx: f64, hy: f64) -> Result<Self, LinalgError> {
        let one_d = |n: usize, h: f64| {
            let m = n.saturating_sub(1);
            Tridiagonal::factor(&vec![T::lit(2.0 * h / 3.0); m], &vec![T::lit(h / 6.0); m.saturating_sub(1)])
        };
        Ok(Self::new(one_d(nx, hx)?, one_d(ny, hy)?))
    }

    pub fn dim(&self) -> usize {
        self.x.dim() * self.y.dim()
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let (nx, ny) = (self.x.dim(), self.y.dim());
        assert_eq!(b.len(), nx * ny);
        for iy in 0..ny {
            self.x.solve_strided(b, iy * nx, 1);
        }
        for ix in 0..nx {
            self.y.solve_strided(b, ix, nx);
        }
    }
}
