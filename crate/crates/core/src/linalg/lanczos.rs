use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CsrMatrix, MassFactor};
use crate::scalar::{axpy, dot};

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { max_iter: 300, tol: 1e-11, seed: 0x51ce }
    }
}

fn top_ritz(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let k = alpha.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (imax, &theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty tridiagonal");
    let last = eig.eigenvectors[(k - 1, imax)];
    (theta, last)
}

/// Largest eigenvalue of the pencil `K x = μ M x` by Lanczos in the
/// M-inner product with full reorthogonalisation.
pub fn max_generalized_eigenvalue(
    k: &CsrMatrix<f64>,
    m: &CsrMatrix<f64>,
    m_factor: &MassFactor<f64>,
    opts: LanczosOptions,
) -> f64 {
    let n = k.nrows();
    assert!(n > 0, "empty pencil");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nrm = m.quadratic(&q).sqrt();
    q.iter_mut().for_each(|v| *v /= nrm);

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut mbasis: Vec<Vec<f64>> = Vec::new();
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut theta_prev = f64::NAN;
    let steps = opts.max_iter.min(n);
    for j in 0..steps {
        let kq = k.mul_vec(&q);
        let a = dot(&q, &kq);
        let mut w = m_factor.solve(&kq);
        axpy(-a, &q, &mut w);
        if let Some(prev) = basis.last() {
            axpy(-beta[j - 1], prev, &mut w);
        }
        alpha.push(a);
        mbasis.push(m.mul_vec(&q));
        basis.push(q.clone());
        for _ in 0..2 {
            for (qi, mqi) in basis.iter().zip(&mbasis) {
                let c = dot(mqi, &w);
                axpy(-c, qi, &mut w);
            }
        }
        let b = m.quadratic(&w).max(0.0).sqrt();
        let (theta, last) = top_ritz(&alpha, &beta);
        let converged = (theta - theta_prev).abs() <= opts.tol * theta.abs() && (b * last).abs() <= 1e3 * opts.tol * theta.abs();
        if converged || b <= 1e-14 * theta.abs().max(1e-300) || j + 1 == steps {
            return theta;
        }
        theta_prev = theta;
        beta.push(b);
        q = w.into_iter().map(|v| v / b).collect();
    }
    unreachable!("loop returns on its final iteration")
}
