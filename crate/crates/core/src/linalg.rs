//! Dense helpers on top of nalgebra: SPD factorizations, the symmetric
//! generalized eigenproblem and Kronecker-structured products.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Chol = Cholesky<f64, Dyn>;

/// Largest dimension for which dense oracle matrices are materialized.
pub const DENSE_LIMIT: usize = 20_000;

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Chol> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::Assembly(format!("{what} is not positive definite")))
}

pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() / scale
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Solution of `A v = λ B v` with `B` symmetric positive definite.
///
/// Eigenvalues are ascending and the columns of `vectors` are
/// `B`-orthonormal.
#[derive(Debug, Clone)]
pub struct GeneralizedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<GeneralizedEigen> {
    let n = a.nrows();
    let l = cholesky(b, "eigenproblem weight")?.l();
    let y = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::LinearSolve("triangular solve in eigenproblem".into()))?;
    let mut c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::LinearSolve("triangular solve in eigenproblem".into()))?;
    symmetrize(&mut c);
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut q = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        q.set_column(dst, &eig.eigenvectors.column(src));
    }
    let vectors = l
        .tr_solve_lower_triangular(&q)
        .ok_or_else(|| Error::LinearSolve("back substitution in eigenproblem".into()))?;
    Ok(GeneralizedEigen { values, vectors })
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
            }
        }
    }
    out
}

/// `(A ⊗ B) x` where `x` stacks blocks of length `B.ncols()`.
pub fn kron_apply(a: &DMatrix<f64>, b: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let blocks = DMatrix::from_column_slice(b.ncols(), a.ncols(), x.as_slice());
    let y = b * blocks * a.transpose();
    DVector::from_column_slice(y.as_slice())
}

pub fn m_inner(m: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (m * y).dot(x)
}

pub fn m_norm_sq(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    m_inner(m, x, x)
}

/// Trace of `X X` for a (not necessarily symmetric) square `X`.
pub fn trace_of_square(x: &DMatrix<f64>) -> f64 {
    x.component_mul(&x.transpose()).sum()
}

/// Numerical rank from singular values.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let tol = sv.max() * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}
