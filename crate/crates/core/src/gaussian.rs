//! The Gaussian limit experiment: a centered normal vector with covariance
//! `sigma` and a matrix square root used to turn standard normal draws into
//! correlated ones.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariance of the limiting normal vector together with a factor
/// `sqrt` satisfying `sqrt * sqrt^T = sigma`.
///
/// The factor is the symmetric square root from an eigendecomposition,
/// with eigenvalues clipped at zero (tolerance `1e-12 * lambda_max`), so
/// numerically semidefinite covariance estimates are accepted where a
/// Cholesky factorization would fail.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianLimit {
    sigma: DMatrix<f64>,
    sqrt: DMatrix<f64>,
}

impl GaussianLimit {
    /// Builds the limit experiment from a symmetric PSD covariance matrix.
    pub fn from_covariance(sigma: DMatrix<f64>) -> Result<Self> {
        let d = sigma.nrows();
        if d == 0 || sigma.ncols() != d {
            return Err(Error::dim(format!(
                "covariance must be square and nonempty, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariance has non-finite entries"));
        }
        let max_abs = sigma.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let sym_tol = 1e-10 * max_abs.max(1.0);
        for i in 0..d {
            for j in (i + 1)..d {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > sym_tol {
                    return Err(Error::invalid(format!(
                        "covariance is not symmetric at ({i},{j}): {} vs {}",
                        sigma[(i, j)],
                        sigma[(j, i)]
                    )));
                }
            }
        }
        // Symmetrize exactly before decomposing so the eigensolver sees
        // a bitwise symmetric matrix.
        let mut s = sigma.clone();
        for i in 0..d {
            for j in (i + 1)..d {
                let m = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = m;
                s[(j, i)] = m;
            }
        }
        let eig = s.clone().symmetric_eigen();
        let lambda_max = eig.eigenvalues.iter().fold(0.0_f64, |m, &l| m.max(l));
        let neg_tol = (1e-10_f64).max(1e-10 * lambda_max);
        if let Some(l) = eig.eigenvalues.iter().find(|&&l| l < -neg_tol) {
            return Err(Error::invalid(format!(
                "covariance is not PSD: eigenvalue {l} below -{neg_tol:e}"
            )));
        }
        let clip = 1e-12 * lambda_max;
        let roots = DVector::from_iterator(
            d,
            eig.eigenvalues.iter().map(|&l| if l <= clip { 0.0 } else { l.sqrt() }),
        );
        let sqrt = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
        let recon = &sqrt * sqrt.transpose();
        let err = (&recon - &s).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if err > 1e-8 * max_abs.max(1.0) {
            return Err(Error::Numeric(format!(
                "square-root reconstruction error {err:e} exceeds tolerance"
            )));
        }
        Ok(GaussianLimit { sigma, sqrt })
    }

    /// Identity-covariance limit in dimension `d`.
    pub fn identity(d: usize) -> Self {
        GaussianLimit {
            sigma: DMatrix::identity(d, d),
            sqrt: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    /// Applies the square root to `xi`, writing `sqrt * xi` into `out`.
    pub fn correlate_into(&self, xi: &[f64], out: &mut [f64]) {
        let d = self.dim();
        debug_assert_eq!(xi.len(), d);
        debug_assert_eq!(out.len(), d);
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += self.sqrt[(i, j)] * xi[j];
            }
            out[i] = acc;
        }
    }
}
