//! Symmetric and SPD matrix primitives: eigendecomposition, spectral matrix
//! functions and the positive root of the cubic that defines the
//! trace-inverse proximal map.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Eigenvalue floor used by inverse operations.
pub const INVERSE_EIG_FLOOR: f64 = 1e-12;

/// Eigendecomposition `Z = U diag(σ) Uᵀ` of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEig<T: Real> {
    pub eigenvalues: DVector<T>,
    /// Orthonormal eigenvectors, stored as columns.
    pub eigenvectors: DMatrix<T>,
}

impl<T: Real> SymEig<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> T {
        self.eigenvalues[self.dim() - 1]
    }

    /// `U diag(f(σ)) Uᵀ`.
    pub fn map<F: Fn(T) -> T>(&self, f: F) -> DMatrix<T> {
        let mut scaled = self.eigenvectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.eigenvalues[j]);
        }
        let out = scaled * self.eigenvectors.transpose();
        symmetrize(&out)
    }

    pub fn reconstruct(&self) -> DMatrix<T> {
        self.map(|v| v)
    }
}

/// `(Z + Zᵀ) / 2`.
pub fn symmetrize<T: Real>(z: &DMatrix<T>) -> DMatrix<T> {
    (z + z.transpose()) * T::lit(0.5)
}

pub(crate) fn ensure_finite<T: Real>(z: &DMatrix<T>, what: &str) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} has non-finite entries")))
    }
}

pub(crate) fn ensure_square<T: Real>(z: &DMatrix<T>, what: &str) -> Result<()> {
    if z.is_square() {
        Ok(())
    } else {
        Err(invalid(format!("{what} must be square, got {}x{}", z.nrows(), z.ncols())))
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// The input is symmetrized before decomposition; asymmetry above
/// `1e-8 · max(1, ‖Z‖_F)` is rejected.
pub fn sym_eig<T: Real>(z: &DMatrix<T>) -> Result<SymEig<T>> {
    ensure_square(z, "matrix")?;
    ensure_finite(z, "matrix")?;
    let m = z.nrows();
    if m == 0 {
        return Err(invalid("cannot decompose an empty matrix"));
    }
    let scale = T::one().max(z.norm());
    if (z - z.transpose()).norm() > T::tolerance(1e-8) * scale {
        return Err(invalid("matrix is not symmetric"));
    }
    let eig = SymmetricEigen::new(symmetrize(z));

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("finite eigenvalues")
    });
    let eigenvalues = DVector::from_iterator(m, order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

fn psd_eig<T: Real>(p: &DMatrix<T>) -> Result<SymEig<T>> {
    let eig = sym_eig(p)?;
    let scale = T::one().max(eig.max_eigenvalue().abs());
    let min = eig.min_eigenvalue();
    if min < -T::tolerance(1e-10) * scale {
        return Err(Error::NotPsd {
            min_eigenvalue: min.as_f64(),
        });
    }
    Ok(eig)
}

fn pd_eig<T: Real>(p: &DMatrix<T>) -> Result<SymEig<T>> {
    let eig = sym_eig(p)?;
    let min = eig.min_eigenvalue();
    if min < T::tolerance(INVERSE_EIG_FLOOR) {
        return Err(Error::NotInvertible {
            min_eigenvalue: min.as_f64(),
        });
    }
    Ok(eig)
}

/// Principal square root of a PSD matrix. Round-off negatives are clamped to zero.
pub fn spd_sqrt<T: Real>(p: &DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = psd_eig(p)?;
    Ok(eig.map(|v| v.max(T::zero()).sqrt()))
}

/// `P^{-1/2}` for a strictly positive definite `P`.
pub fn spd_inv_sqrt<T: Real>(p: &DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = pd_eig(p)?;
    Ok(eig.map(|v| T::one() / v.sqrt()))
}

/// `P^{-1}` for a strictly positive definite `P`.
pub fn spd_inverse<T: Real>(p: &DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = pd_eig(p)?;
    Ok(eig.map(|v| T::one() / v))
}

/// Projection onto `{A : A ⪰ floor·I}` by eigenvalue clamping.
pub fn clamp_eigenvalues<T: Real>(z: &DMatrix<T>, floor: T) -> Result<DMatrix<T>> {
    let eig = sym_eig(z)?;
    Ok(eig.map(|v| v.max(floor)))
}

fn cubic_residual<T: Real>(x: T, s: T, eta: T) -> T {
    x * x * (x - s) - eta
}

/// The unique positive root of `λ³ − s·λ² − η` for `η > 0`.
///
/// Safeguarded Newton inside the bracket `[0, max(s, 0) + η^{1/3} + 1]`,
/// which always contains the root since the polynomial is `−η` at zero and
/// positive at the right end.
pub fn positive_cubic_root<T: Real>(s: T, eta: T) -> Result<T> {
    if !(eta > T::zero()) || !eta.is_finite() {
        return Err(invalid(format!("cubic scale must be positive, got {eta}")));
    }
    if !s.is_finite() {
        return Err(invalid("cubic coefficient is not finite"));
    }
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let cbrt_eta = eta.cbrt();
    let mut lo = T::zero();
    let mut hi = s.max(T::zero()) + cbrt_eta + T::one();
    let tol = T::tolerance(1e-12);

    let mut x = s.max(cbrt_eta) + T::one();
    if x >= hi {
        x = (lo + hi) / two;
    }
    let mut best = x;
    let mut best_res = T::max_value().unwrap_or(T::one());
    for _ in 0..200 {
        let r = cubic_residual(x, s, eta);
        let mag = r.abs();
        if mag < best_res {
            best = x;
            best_res = mag;
        }
        if mag <= tol * T::one().max(x * x * x) {
            return Ok(x);
        }
        if r > T::zero() {
            hi = x;
        } else {
            lo = x;
        }
        let slope = three * x * x - two * s * x;
        let newton = x - r / slope;
        x = if slope > T::zero() && newton > lo && newton < hi {
            newton
        } else {
            (lo + hi) / two
        };
        if hi - lo <= T::default_epsilon() * hi {
            break;
        }
    }
    Ok(best)
}
