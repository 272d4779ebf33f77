//! Fixed task structures encoding prior knowledge about task relations.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::linalg::{ensure_finite, ensure_square, spd_inverse};
use crate::model::StructureMatrix;
use crate::scalar::Real;

/// `A = (L + γI)⁻¹` with `L = diag(W·1) − W` the Laplacian of the task graph `W`.
pub fn structure_from_graph<T: Real>(w: &DMatrix<T>, gamma: f64) -> Result<StructureMatrix<T>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("gamma must be positive, got {gamma}")));
    }
    ensure_square(w, "adjacency matrix")?;
    ensure_finite(w, "adjacency matrix")?;
    let t = w.nrows();
    for i in 0..t {
        if w[(i, i)] != T::zero() {
            return Err(invalid("adjacency matrix must have a zero diagonal"));
        }
        for j in 0..t {
            if w[(i, j)] < T::zero() {
                return Err(invalid("adjacency weights must be nonnegative"));
            }
            if w[(i, j)] != w[(j, i)] {
                return Err(invalid("adjacency matrix must be symmetric"));
            }
        }
    }
    let degrees = w.column_sum();
    let laplacian = DMatrix::from_diagonal(&degrees) - w;
    let precision = laplacian + DMatrix::identity(t, t) * T::lit(gamma);
    StructureMatrix::new(spd_inverse(&precision)?)
}

/// `A = (I + γ·11ᵀ/T)⁻¹ = I − γ/(T(1+γ))·11ᵀ`.
///
/// The inverse of this `A` penalizes the spread of the task predictors
/// around their mean, weighted by `γ`.
pub fn structure_mean_variance<T: Real>(tasks: usize, gamma: f64) -> Result<StructureMatrix<T>> {
    if tasks == 0 {
        return Err(invalid("need at least one task"));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("gamma must be nonnegative, got {gamma}")));
    }
    let coupling = T::lit(gamma / (tasks as f64 * (1.0 + gamma)));
    let a = DMatrix::identity(tasks, tasks) - DMatrix::from_element(tasks, tasks, coupling);
    StructureMatrix::new(a)
}
