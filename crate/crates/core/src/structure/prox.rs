//! Closed-form proximal maps used by the structure solver.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::linalg::{ensure_finite, positive_cubic_root, sym_eig};
use crate::scalar::Real;

/// Entrywise `sign(z)·max(|z| − η, 0)`: the proximal map of `η‖·‖_ℓ1`.
pub fn soft_threshold<T: Real>(z: &DMatrix<T>, eta: T) -> Result<DMatrix<T>> {
    if !(eta >= T::zero()) {
        return Err(invalid(format!("threshold must be nonnegative, got {eta}")));
    }
    ensure_finite(z, "soft-threshold input")?;
    Ok(z.map(|v| shrink(v, eta)))
}

#[inline]
pub(crate) fn shrink<T: Real>(v: T, eta: T) -> T {
    if v > eta {
        v - eta
    } else if v < -eta {
        v + eta
    } else {
        T::zero()
    }
}

/// Proximal map of `η·tr(A⁻¹)` over positive definite matrices:
/// `argmin_A η·tr(A⁻¹) + ½‖A − Z‖²_F`.
///
/// With `Z = U·Σ·Uᵀ` the minimizer is `U·Λ·Uᵀ`, where each `Λₜₜ` is the
/// positive root of `λ³ − Σₜₜ·λ² − η`.
pub fn prox_trace_inverse<T: Real>(z: &DMatrix<T>, eta: T) -> Result<DMatrix<T>> {
    if !(eta > T::zero()) {
        return Err(invalid(format!("prox scale must be positive, got {eta}")));
    }
    let eig = sym_eig(z)?;
    let roots = eig
        .eigenvalues
        .iter()
        .map(|&s| positive_cubic_root(s, eta))
        .collect::<Result<Vec<T>>>()?;
    let mut scaled = eig.eigenvectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= roots[j];
    }
    let out = scaled * eig.eigenvectors.transpose();
    Ok(crate::linalg::symmetrize(&out))
}
