//! Separable space-time precision: stationary AR(1) in time, Matérn GMRF in
//! space. The latent vector is ordered time-major, index `t * n + i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::kron_dense_sparse;
use crate::spde::{MaternParams, SparsePrecision};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StFieldParams {
    /// Innovation field; the stationary marginal variance is `sd²/(1−φ²)`.
    pub spatial: MaternParams,
    pub phi: f64,
    pub t: usize,
}

pub fn check_phi(phi: f64) -> Result<()> {
    if phi.is_finite() && phi.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("AR coefficient must lie in (-1, 1), got {phi}")))
    }
}

/// Dense `T × T` precision of a stationary AR(1) with unit innovations.
pub fn ar1_precision(phi: f64, t: usize) -> Result<Vec<Vec<f64>>> {
    check_phi(phi)?;
    if t == 0 {
        return Err(Error::invalid("need at least one time point"));
    }
    let [basis_ends, basis_mid, basis_off] = ar1_basis(t);
    let [a, b, c] = ar1_coefficients(phi, t);
    Ok((0..t)
        .map(|i| {
            (0..t)
                .map(|j| a * basis_ends[i][j] + b * basis_mid[i][j] + c * basis_off[i][j])
                .collect()
        })
        .collect())
}

/// Fixed matrices spanning every AR(1) precision of size `t`: the end
/// diagonal entries, the middle diagonal entries, and the first off-diagonals.
pub fn ar1_basis(t: usize) -> [Vec<Vec<f64>>; 3] {
    let mut ends = vec![vec![0.0; t]; t];
    let mut mid = vec![vec![0.0; t]; t];
    let mut off = vec![vec![0.0; t]; t];
    for i in 0..t {
        if i == 0 || i + 1 == t {
            ends[i][i] = 1.0;
        } else {
            mid[i][i] = 1.0;
        }
        if i + 1 < t {
            off[i][i + 1] = 1.0;
            off[i + 1][i] = 1.0;
        }
    }
    [ends, mid, off]
}

/// Coefficients of [`ar1_basis`] for a given `φ`.
pub fn ar1_coefficients(phi: f64, t: usize) -> [f64; 3] {
    if t == 1 {
        [1.0 - phi * phi, 0.0, 0.0]
    } else {
        [1.0, 1.0 + phi * phi, -phi]
    }
}

/// `log |M(φ, T)|`, equal to `log(1 − φ²)` for every `T`.
pub fn ar1_log_det(phi: f64) -> f64 {
    (1.0 - phi * phi).ln()
}

/// `M(φ, T) ⊗ Qs`.
pub fn st_precision(qs: &SparsePrecision, phi: f64, t: usize) -> Result<SparsePrecision> {
    let m = ar1_precision(phi, t)?;
    Ok(SparsePrecision::new(kron_dense_sparse(&m, qs.matrix())))
}

/// `log |M ⊗ Qs|` from `log |Qs|`.
pub fn st_log_det(qs_log_det: f64, n: usize, phi: f64, t: usize) -> f64 {
    n as f64 * ar1_log_det(phi) + t as f64 * qs_log_det
}
