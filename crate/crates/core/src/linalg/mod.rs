//! Sparse and banded linear algebra used by assembly, basis construction and
//! the time stepper.

mod kron;
mod lanczos;
mod skyline;
mod sparse;

pub use kron::{KroneckerMass, Tridiagonal};
pub use lanczos::{max_generalized_eigenvalue, LanczosOptions};
pub use skyline::SkylineCholesky;
pub use sparse::CsrMatrix;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Factored mass operator: either a general envelope Cholesky factor or the
/// exact Kronecker factorisation available on uniform tensor grids.
#[derive(Debug, Clone)]
pub enum MassFactor<T> {
    Skyline(SkylineCholesky<T>),
    Kronecker(KroneckerMass<T>),
}

impl<T: Scalar> MassFactor<T> {
    pub fn dim(&self) -> usize {
        match self {
            MassFactor::Skyline(f) => f.dim(),
            MassFactor::Kronecker(k) => k.dim(),
        }
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        match self {
            MassFactor::Skyline(f) => f.solve_in_place(b),
            MassFactor::Kronecker(k) => k.solve_in_place(b),
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
