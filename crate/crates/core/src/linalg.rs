//! Small dense least-squares and subspace helpers, built on the symmetric
//! eigendecomposition of Gram matrices.
//!
//! nalgebra's general SVD mis-factors near-rank-deficient matrices (the
//! reconstruction error can reach 1e-2 on an exactly rank-1 2x2), and
//! rank-deficient systems are routine here: redundant assets make node
//! increment matrices collinear by construction. The symmetric eigensolver
//! does not share that defect, and the matrices involved are tiny, so the
//! squared conditioning of the normal equations costs nothing at our
//! tolerances.

use nalgebra::{DMatrix, DVector};

/// Effective eigenvalue cutoff for a Gram matrix: the requested relative
/// cut, squared, floored at a few digits above the Gram roundoff level
/// (so requests below sigma/sigma_max ~ 1e-7 saturate there).
fn gram_cut(lam_max: f64, rel_cut: f64) -> f64 {
    lam_max * (rel_cut * rel_cut).max(1e-14)
}

/// Minimum-norm least-squares solution of `a x = b`; singular directions
/// with sigma <= rel_cut * sigma_max are treated as zero.
pub(crate) fn least_squares_min_norm(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rel_cut: f64,
) -> DVector<f64> {
    let gram = a.transpose() * a;
    let atb = a.transpose() * b;
    let eig = gram.symmetric_eigen();
    let lam_max = eig.eigenvalues.max().max(0.0);
    let cut = gram_cut(lam_max, rel_cut);
    let mut x = DVector::zeros(a.ncols());
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cut && lam > 0.0 {
            let v = eig.eigenvectors.column(k);
            let coef = v.dot(&atb) / lam;
            x.axpy(coef, &v.clone_owned(), 1.0);
        }
    }
    x
}

/// Orthonormal basis of the null space of `a` (right singular vectors with
/// sigma <= rel_cut * sigma_max).
pub(crate) fn null_space(a: &DMatrix<f64>, rel_cut: f64) -> Vec<DVector<f64>> {
    let gram = a.transpose() * a;
    let eig = gram.symmetric_eigen();
    let lam_max = eig.eigenvalues.max().max(0.0);
    let cut = gram_cut(lam_max, rel_cut);
    let mut basis = Vec::new();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if !(lam > cut) {
            basis.push(eig.eigenvectors.column(k).clone_owned());
        }
    }
    basis
}

/// Row-reduces `a x = b` to an equivalent full-rank system with orthonormal
/// rows (the right singular vectors of `a`). The input system must be
/// consistent.
pub(crate) fn reduced_system(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rel_cut: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let gram = a.transpose() * a;
    let atb = a.transpose() * b;
    let eig = gram.symmetric_eigen();
    let lam_max = eig.eigenvalues.max().max(0.0);
    let cut = gram_cut(lam_max, rel_cut);
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cut && lam > 0.0 {
            let v = eig.eigenvectors.column(k).clone_owned();
            // v' x = (u' b) = v' A' b / sigma^2 for consistent systems.
            rhs.push(v.dot(&atb) / lam);
            rows.push(v);
        }
    }
    let r = rows.len();
    let n = a.ncols();
    let mut matrix = DMatrix::zeros(r, n);
    for (k, v) in rows.iter().enumerate() {
        matrix.set_row(k, &v.transpose());
    }
    (matrix, DVector::from_vec(rhs))
}
