use super::{CsrMatrix, LinalgError};
use crate::scalar::Scalar;

/// Envelope (skyline) Cholesky factor `A = L Lᵀ` of a symmetric positive
/// definite matrix.
///
/// Row `i` of `L` is stored contiguously from its first structural nonzero
/// column to the diagonal, so banded operators cost `O(n b²)` to factor and
/// dense ones degrade gracefully to ordinary dense Cholesky.
#[derive(Debug, Clone)]
pub struct SkylineCholesky<T> {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> SkylineCholesky<T> {
    /// Factors using the lower triangle of `a`.
    pub fn factor(a: &CsrMatrix<T>) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LinalgError::Dimension { expected: n, got: a.ncols() });
        }
        let mut first = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            let (cols, _) = a.row(i);
            let f = cols.iter().copied().filter(|&c| c <= i).min().unwrap_or(i);
            first.push(f);
            offset.push(offset[i] + (i - f + 1));
        }
        let mut data = vec![T::zero(); offset[n]];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if c <= i {
                    data[offset[i] + c - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let oi = offset[i];
            for j in fi..i {
                let fj = first[j];
                let oj = offset[j];
                let k0 = fi.max(fj);
                let len = j - k0;
                let ri = &data[oi + k0 - fi..oi + k0 - fi + len];
                let rj = &data[oj + k0 - fj..oj + k0 - fj + len];
                let mut s = T::zero();
                for (x, y) in ri.iter().zip(rj) {
                    s += *x * *y;
                }
                let ljj = data[oj + j - fj];
                let idx = oi + j - fi;
                data[idx] = (data[idx] - s) / ljj;
            }
            let row = &data[oi..oi + i - fi];
            let mut s = T::zero();
            for x in row {
                s += *x * *x;
            }
            let d = data[oi + i - fi] - s;
            if !(d > T::zero()) || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { row: i, pivot: d.as_f64() });
            }
            data[oi + i - fi] = d.sqrt();
        }
        Ok(Self { first, offset, data })
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Stored entries of the factor envelope.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    #[inline]
    fn diag(&self, i: usize) -> T {
        self.data[self.offset[i + 1] - 1]
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1] - 1];
            let mut s = T::zero();
            for (l, x) in row.iter().zip(&b[fi..i]) {
                s += *l * *x;
            }
            b[i] = (b[i] - s) / self.diag(i);
        }
        for i in (0..n).rev() {
            let xi = b[i] / self.diag(i);
            b[i] = xi;
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1] - 1];
            for (l, x) in row.iter().zip(&mut b[fi..i]) {
                *x -= *l * xi;
            }
        }
    }

    /// Solves `A X = B` for `r` right-hand sides stored row-major
    /// (`b[i * r + c]` is row `i` of column `c`).
    pub fn solve_many_in_place(&self, b: &mut [T], r: usize) {
        let n = self.dim();
        assert_eq!(b.len(), n * r);
        if r == 0 {
            return;
        }
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1] - 1];
            let (head, tail) = b.split_at_mut(i * r);
            let bi = &mut tail[..r];
            for (k, &l) in row.iter().enumerate() {
                if l == T::zero() {
                    continue;
                }
                let bk = &head[(fi + k) * r..(fi + k + 1) * r];
                for (x, y) in bi.iter_mut().zip(bk) {
                    *x -= l * *y;
                }
            }
            let d = T::one() / self.diag(i);
            for x in bi.iter_mut() {
                *x *= d;
            }
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1] - 1];
            let (head, tail) = b.split_at_mut(i * r);
            let bi = &mut tail[..r];
            let d = T::one() / self.diag(i);
            for x in bi.iter_mut() {
                *x *= d;
            }
            for (k, &l) in row.iter().enumerate() {
                if l == T::zero() {
                    continue;
                }
                let bk = &mut head[(fi + k) * r..(fi + k + 1) * r];
                for (y, x) in bk.iter_mut().zip(bi.iter()) {
                    *y -= l * *x;
                }
            }
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
