//! Continuous-time filter right-hand sides composed by the closed loops:
//! low-pass tracking, washout (DC rejection) and the differential Riccati
//! inverse filter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SonesError};

/// Corner frequencies of the three loop filters, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterGains {
    pub omega_l: f64,
    pub omega_h: f64,
    pub omega_r: f64,
}

impl FilterGains {
    pub fn new(omega_l: f64, omega_h: f64, omega_r: f64) -> Result<Self> {
        if !(omega_l > 0.0 && omega_h > 0.0 && omega_r > 0.0) {
            return Err(SonesError::InvalidArgument(
                "filter gains must be strictly positive".into(),
            ));
        }
        Ok(Self { omega_l, omega_h, omega_r })
    }
}

/// First-order low-pass: `x_dot = omega_l (u - x)`.
pub fn lowpass_rhs(x: &DVector<f64>, u: &DVector<f64>, omega_l: f64) -> Result<DVector<f64>> {
    if x.len() != u.len() {
        return Err(SonesError::ShapeMismatch);
    }
    Ok((u - x) * omega_l)
}

/// Matrix-valued low-pass with the same dynamics per entry.
pub fn lowpass_rhs_mat(x: &DMatrix<f64>, u: &DMatrix<f64>, omega_l: f64) -> Result<DMatrix<f64>> {
    if x.shape() != u.shape() {
        return Err(SonesError::ShapeMismatch);
    }
    Ok((u - x) * omega_l)
}

/// Washout state dynamics: `eta_dot = omega_h (y - eta)`.
pub fn washout_rhs(eta: f64, y: f64, omega_h: f64) -> f64 {
    omega_h * (y - eta)
}

/// Washout output `y - eta`; rejects the DC component of `y` asymptotically.
pub fn washout_output(y: f64, eta: f64) -> f64 {
    y - eta
}

/// Riccati inverse filter: `Lambda_dot = omega_r Lambda (I - T_hat Lambda)`,
/// with equilibrium `Lambda = T_hat^{-1}` when `T_hat` is invertible.
pub fn riccati_rhs(
    lambda: &DMatrix<f64>,
    t_hat: &DMatrix<f64>,
    omega_r: f64,
) -> Result<DMatrix<f64>> {
    let n = lambda.nrows();
    if !lambda.is_square() || t_hat.shape() != (n, n) {
        return Err(SonesError::ShapeMismatch);
    }
    let inner = DMatrix::identity(n, n) - t_hat * lambda;
    Ok(lambda * inner * omega_r)
}
