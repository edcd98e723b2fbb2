//! Small dense kernels. Dimensions here never exceed a few hundred.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).min()
}

/// Largest eigenvalue magnitude of a symmetric matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).amax()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol
}

/// Solve `m x = rhs` for symmetric positive definite `m`.
pub fn cholesky_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_extremes() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![-3.0, 0.5, 2.0]));
        assert_eq!(min_eigenvalue(&m), -3.0);
        assert_eq!(spectral_radius(&m), 3.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let rhs = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(cholesky_solve(&m, &rhs), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn cholesky_solves() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let rhs = DVector::from_vec(vec![1.0, 2.0]);
        let x = cholesky_solve(&m, &rhs).unwrap();
        assert!((&m * &x - rhs).norm() < 1e-14);
    }
}
