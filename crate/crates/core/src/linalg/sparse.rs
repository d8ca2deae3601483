use std::io::{self, Write};

use crate::scalar::Scalar;

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds from (row, col, value) triplets; duplicates are summed in
    /// insertion order so assembly is reproducible.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_ptr[r + 1] += 1;
                col_idx.push(c);
                values.push(v);
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    /// Assembles from per-row (col, value) lists that are already sorted.
    pub(crate) fn from_sorted_rows(nrows: usize, ncols: usize, rows: Vec<Vec<(usize, T)>>) -> Self {
        debug_assert_eq!(rows.len(), nrows);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => T::zero(),
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c, v))
        })
    }

    /// `y = A x`
    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = T::zero();
            for k in a..b {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[T], y: &[T]) -> T {
        assert_eq!(x.len(), self.nrows);
        let mut acc = T::zero();
        for (i, xi) in x.iter().enumerate() {
            let (cols, vals) = self.row(i);
            let mut r = T::zero();
            for (c, v) in cols.iter().zip(vals) {
                r += *v * y[*c];
            }
            acc += *xi * r;
        }
        acc
    }

    pub fn quadratic(&self, x: &[T]) -> T {
        self.bilinear(x, x)
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let k = next[c];
                col_idx[k] = i;
                values[k] = v;
                next[c] += 1;
            }
        }
        Self { nrows: self.ncols, ncols: self.nrows, row_ptr, col_idx, values }
    }

    /// Sparse product `self * rhs` (Gustavson with a dense accumulator).
    pub fn matmul(&self, rhs: &CsrMatrix<T>) -> Self {
        assert_eq!(self.ncols, rhs.nrows, "matmul dimension mismatch");
        let mut acc = vec![T::zero(); rhs.ncols];
        let mut mark = vec![usize::MAX; rhs.ncols];
        let mut touched: Vec<usize> = Vec::new();
        let mut rows = Vec::with_capacity(self.nrows);
        for i in 0..self.nrows {
            touched.clear();
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (rc, rv) = rhs.row(k);
                for (&j, &b) in rc.iter().zip(rv) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = T::zero();
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            rows.push(touched.iter().map(|&j| (j, acc[j])).collect());
        }
        Self::from_sorted_rows(self.nrows, rhs.ncols, rows)
    }

    /// Galerkin projection `Pᵀ A P`, symmetrised entrywise.
    pub fn galerkin(&self, p: &CsrMatrix<T>) -> Self {
        let ap = self.matmul(p);
        let pt = p.transpose();
        let c = pt.matmul(&ap);
        c.symmetrized()
    }

    /// Returns `(A + Aᵀ)/2`. Assumes a structurally symmetric pattern.
    pub fn symmetrized(&self) -> Self {
        let half = T::lit(0.5);
        let mut out = self.clone();
        for i in 0..self.nrows {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            for k in a..b {
                let j = self.col_idx[k];
                if j > i {
                    let v = half * (self.values[k] + self.get(j, i));
                    out.values[k] = v;
                    let (ja, jb) = (out.row_ptr[j], out.row_ptr[j + 1]);
                    if let Ok(pos) = out.col_idx[ja..jb].binary_search(&i) {
                        out.values[ja + pos] = v;
                    }
                }
            }
        }
        out
    }

    /// Principal submatrix on the given (sorted or unsorted) index set.
    pub fn principal_submatrix(&self, index: &[usize]) -> Self {
        let mut local = vec![usize::MAX; self.ncols];
        for (l, &g) in index.iter().enumerate() {
            local[g] = l;
        }
        let rows = index
            .iter()
            .map(|&g| {
                let (cols, vals) = self.row(g);
                let mut r: Vec<(usize, T)> = cols
                    .iter()
                    .zip(vals)
                    .filter(|(c, _)| local[**c] != usize::MAX)
                    .map(|(c, v)| (local[*c], *v))
                    .collect();
                r.sort_by_key(|e| e.0);
                r
            })
            .collect();
        Self::from_sorted_rows(index.len(), index.len(), rows)
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn symmetry_defect(&self) -> T {
        let mut worst = T::zero();
        let mut scale = T::zero();
        for (i, j, v) in self.triplets() {
            scale = scale.max(v.abs());
            worst = worst.max((v - self.get(j, i)).abs());
        }
        if scale > T::zero() {
            worst / scale
        } else {
            T::zero()
        }
    }

    pub fn cast<U: Scalar>(&self) -> CsrMatrix<U> {
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    /// Coordinate dump: one `row col value` line per stored entry, row-major.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{} {} {:.16e}", i, j, v.as_f64())?;
        }
        Ok(())
    }
}
