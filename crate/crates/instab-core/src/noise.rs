//! Constructive additive noise that defeats a given power budget.
//!
//! Given a growth certificate (R, phi_L) for the drift and state-noise data,
//! any additive noise with tr(D'RD) > u_hat * beta_U / phi_L makes budget
//! u_hat insufficient. This module builds the sparsest such D: a single
//! entry, placed where the leading eigenvector of R has support, scaled so
//! the trace condition holds with slack alpha. It turns the existence half
//! of the theory into something a user can run: "how little noise, injected
//! where, would make this plant impossible to hold down at budget u_hat".

use nalgebra::Complex;
use thiserror::Error;

use crate::matrix::{self, CMat, HermitianMatrix, Mat, NumericalError};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("rank deficiency: {0}")]
    Rank(String),
    #[error("trace inequality failed verification: {0}")]
    Tolerance(String),
    #[error(transparent)]
    Numerical(#[from] NumericalError),
}

/// A one-entry noise matrix certified against budget `u_hat`.
#[derive(Clone, Debug)]
pub struct NoiseConstruction {
    /// n x ell2, zero except for entry (j_tilde, 0).
    pub d: Mat,
    /// Slack above the minimum required noise level.
    pub alpha: f64,
    /// Index of the eigenvalue of R used (descending order, so 0 whenever
    /// R is nonzero).
    pub i_tilde: usize,
    /// Row carrying the nonzero entry: first component where the selected
    /// eigenvector has support.
    pub j_tilde: usize,
    /// The selected positive eigenvalue of R.
    pub mu_tilde: f64,
    /// Magnitude of the selected eigenvector component.
    pub xi_entry: f64,
}

/// Builds the noise matrix. `alpha` defaults to 1e-2 * (1 + u_hat *
/// beta_U / phi_L): a small slack relative to the level being beaten.
///
/// R must be PSD and nonzero; that is the caller's contract, and the final
/// trace verification (1e-10 relative) catches violations as `Tolerance`
/// errors rather than silently emitting an invalid construction.
pub fn construct_noise(
    r: &HermitianMatrix,
    b: &Mat,
    u_hat: f64,
    phi_l: f64,
    alpha: Option<f64>,
    ell2: usize,
) -> Result<NoiseConstruction, NoiseError> {
    if !(phi_l > 0.0) || !phi_l.is_finite() {
        return Err(NoiseError::Invalid(format!("phi_L must be positive, got {phi_l}")));
    }
    if !(u_hat >= 0.0) || !u_hat.is_finite() {
        return Err(NoiseError::Invalid(format!("u_hat must be nonnegative, got {u_hat}")));
    }
    if ell2 == 0 {
        return Err(NoiseError::Invalid("ell2 must be at least 1".into()));
    }
    let n = r.dim();
    if b.nrows() != n {
        return Err(NoiseError::Invalid(format!(
            "B has {} rows, R is {n} x {n}",
            b.nrows()
        )));
    }

    let bc = to_complex(b);
    let btrb = HermitianMatrix::new(bc.adjoint() * r.entries() * &bc);
    let beta_u = matrix::lambda_max(&btrb)?.max(0.0);
    let required = u_hat * beta_u / phi_l;
    let alpha = match alpha {
        Some(a) if a > 0.0 && a.is_finite() => a,
        Some(a) => {
            return Err(NoiseError::Invalid(format!("alpha must be positive, got {a}")))
        }
        None => 1e-2 * (1.0 + required),
    };

    let eig = matrix::hermitian_eig(r)?;
    let scale = matrix::max_abs(&r.real_part())
        .max(r.entries().iter().map(|z| z.im.abs()).fold(0.0, f64::max));
    let mu_tilde = eig.values[0];
    if mu_tilde <= 1e-12 * (1.0 + scale) {
        return Err(NoiseError::Rank(format!(
            "R is numerically zero: largest eigenvalue {mu_tilde:.3e}"
        )));
    }
    let xi = eig.vectors.column(0);
    let j_tilde = (0..n)
        .find(|&j| xi[j].norm() > 1e-12)
        .ok_or_else(|| NoiseError::Rank("selected eigenvector has no support".into()))?;
    let xi_entry = xi[j_tilde].norm();

    let target = alpha + required;
    let entry = target.sqrt() / (mu_tilde.sqrt() * xi_entry);
    let mut d = Mat::zeros(n, ell2);
    d[(j_tilde, 0)] = entry;

    // tr(D'RD) = sum_i mu_i |xi_i[j]|^2 entry^2 >= mu_tilde |xi_tilde[j]|^2
    // entry^2 = target, with equality iff R is rank one.
    let dc = to_complex(&d);
    let achieved = (dc.adjoint() * r.entries() * &dc).trace().re;
    if achieved < target * (1.0 - 1e-10) {
        return Err(NoiseError::Tolerance(format!(
            "tr(D'RD) = {achieved:.12e} < alpha + u_hat beta_U / phi_L = {target:.12e}; \
             is R positive semidefinite?"
        )));
    }

    Ok(NoiseConstruction { d, alpha, i_tilde: 0, j_tilde, mu_tilde, xi_entry })
}

fn to_complex(m: &Mat) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| Complex::new(m[(i, j)], 0.0))
}
