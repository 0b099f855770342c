//! Small dense helpers for symmetric covariance matrices.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative PSD tolerance for covariances: min eigenvalue must be at least
/// `-PSD_TOLERANCE * trace`.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Eigenvalues below `-SQRT_REJECT_TOLERANCE * trace` make the square root fail;
/// those between that bound and zero are clamped to zero.
pub const SQRT_REJECT_TOLERANCE: f64 = 1e-10;

/// Relative asymmetry accepted on covariance inputs, measured against the
/// largest absolute entry.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| if i == j { m[(i, i)] } else { 0.5 * (m[(i, j)] + m[(j, i)]) })
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Checks squareness, finiteness, and symmetry within [`SYMMETRY_TOLERANCE`].
pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::shape(format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Value("matrix has non-finite entries".into()));
    }
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOLERANCE * max_abs(m).max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|j| (0..n).all(|i| i == j || m[(i, j)] == 0.0))
}

/// Eigenvalues of a symmetric matrix. Diagonal matrices skip the decomposition.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if is_diagonal(m) {
        return m.diagonal().iter().copied().collect();
    }
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).into_iter().fold(f64::INFINITY, f64::min)
}

/// Fails with [`Error::NotPsd`] when the smallest eigenvalue is below
/// `-PSD_TOLERANCE * trace`. A zero-trace matrix must be exactly zero.
pub fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    check_symmetric(m)?;
    if m.nrows() == 0 {
        return Ok(());
    }
    let trace = m.trace();
    if trace == 0.0 && m.iter().all(|v| *v == 0.0) {
        return Ok(());
    }
    let tolerance = PSD_TOLERANCE * trace.abs();
    let min_eig = min_eigenvalue(m);
    if min_eig < -tolerance || trace < 0.0 {
        return Err(Error::NotPsd { layer: None, min_eigenvalue: min_eig, tolerance });
    }
    Ok(())
}

/// Symmetric PSD square root `A` with `A·A = m`, via eigendecomposition.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    let n = m.nrows();
    let trace = m.trace();
    let reject_below = -SQRT_REJECT_TOLERANCE * trace.abs();
    let clamp = |lambda: f64| -> Result<f64> {
        if lambda < reject_below || (lambda < 0.0 && trace <= 0.0) {
            Err(Error::NotPsd { layer: None, min_eigenvalue: lambda, tolerance: -reject_below })
        } else {
            Ok(lambda.max(0.0).sqrt())
        }
    };

    if is_diagonal(m) {
        let mut root = DMatrix::zeros(n, n);
        for i in 0..n {
            root[(i, i)] = clamp(m[(i, i)])?;
        }
        return Ok(root);
    }

    let eig = SymmetricEigen::new(symmetrize(m));
    let mut scaled = eig.eigenvectors.clone();
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = clamp(*lambda)?;
        scaled.column_mut(k).scale_mut(s);
    }
    Ok(symmetrize(&(scaled * eig.eigenvectors.transpose())))
}
