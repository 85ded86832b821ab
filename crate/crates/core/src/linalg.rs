//! Small dense helpers for symmetric matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Asymmetry tolerance for shape and covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest eigenvalue still accepted as positive semidefinite.
pub const PSD_TOL: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().max()
}

/// Validates that `m` is square, symmetric and PSD within the default tolerances.
pub fn check_psd(what: &'static str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            context: what,
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if max_asymmetry(m) > SYMMETRY_TOL * (1.0 + m.amax()) {
        return Err(Error::NotPositiveSemidefinite {
            what,
            min_eigenvalue: f64::NAN,
        });
    }
    let min_eig = min_eigenvalue(m);
    if min_eig < -PSD_TOL * (1.0 + m.amax()) {
        return Err(Error::NotPositiveSemidefinite {
            what,
            min_eigenvalue: min_eig,
        });
    }
    Ok(())
}

/// Applies `f` to the eigenvalues of a symmetric matrix (negative eigenvalues clamped to 0
/// first) and reassembles `V f(Λ) Vᵀ`.
fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let mapped = eig.eigenvalues.map(|l| f(l.max(0.0)));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&mapped) * v.transpose()))
}

/// Factor `L` (n × r) with `L Lᵀ = m` for a PSD `m`, keeping only the
/// eigenvalues above eigensolver roundoff. A zero eigenvalue computed as 1e-16
/// would otherwise come back as a 1e-8 column.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = symmetrize(m).symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l));
    let cutoff = 16.0 * n as f64 * f64::EPSILON * top;
    let keep: alloc::vec::Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > cutoff).collect();
    DMatrix::from_fn(n, keep.len(), |r, c| {
        eig.eigenvectors[(r, keep[c])] * libm::sqrt(eig.eigenvalues[keep[c]])
    })
}

/// Symmetric PSD square root.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, libm::sqrt)
}

/// Inverse of the symmetric square root of a positive definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.min() <= 1e-14 * scale {
        return Err(Error::NotPositiveDefinite { what: "matrix square root" });
    }
    Ok(spectral_map(m, |l| 1.0 / libm::sqrt(l)))
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix; eigenvalues below
/// `rel_tol * λ_max` are treated as zero.
pub fn pinv_psd(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let cutoff = rel_tol * eig.eigenvalues.amax();
    let inv = eig
        .eigenvalues
        .map(|l| if l > cutoff && l > 0.0 { 1.0 / l } else { 0.0 });
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&inv) * v.transpose()))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(what: &'static str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    symmetrize(m)
        .cholesky()
        .map(|c| symmetrize(&c.inverse()))
        .ok_or(Error::NotPositiveDefinite { what })
}

/// Block diagonal matrix from square or rectangular blocks.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
