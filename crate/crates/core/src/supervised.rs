//! Least-squares supervised step: the coefficients `C` for a fixed structure `A`.
//!
//! For the objective `(1/n)‖Y − KCA‖² + λ·tr(A⁻¹(CA)ᵀK(CA))` the stationarity
//! condition is the Sylvester-type equation `K·C·A + n·λ·C = Y`. It is solved
//! in the joint eigenbasis of `K` and `A`, where it decouples entrywise.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::linalg::{ensure_square, sym_eig};
use crate::model::StructureMatrix;
use crate::scalar::Real;

/// Largest `n·T` accepted by [`solve_supervised_dense`].
pub const DENSE_ORACLE_LIMIT: usize = 200;

fn check_inputs<T: Real>(k: &DMatrix<T>, y: &DMatrix<T>, a: &StructureMatrix<T>, lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    ensure_square(k, "kernel matrix")?;
    if k.nrows() != y.nrows() || y.ncols() != a.dim() {
        return Err(invalid(format!(
            "kernel {}x{}, outputs {}x{} and structure {}x{} do not conform",
            k.nrows(),
            k.ncols(),
            y.nrows(),
            y.ncols(),
            a.dim(),
            a.dim()
        )));
    }
    Ok(())
}

/// Solves `K·C·A + n·λ·C = Y` for `C`.
pub fn solve_supervised<T: Real>(
    k: &DMatrix<T>,
    y: &DMatrix<T>,
    a: &StructureMatrix<T>,
    lambda: f64,
) -> Result<DMatrix<T>> {
    check_inputs(k, y, a, lambda)?;
    let n = k.nrows();
    let shift = T::lit(n as f64 * lambda);

    let k_eig = sym_eig(k)?;
    let k_scale = T::one().max(k_eig.max_eigenvalue().abs());
    if k_eig.min_eigenvalue() < -T::tolerance(1e-10) * k_scale * T::lit(n as f64) {
        return Err(Error::NotPsd {
            min_eigenvalue: k_eig.min_eigenvalue().as_f64(),
        });
    }
    let a_eig = sym_eig(a.matrix())?;
    if !(a_eig.min_eigenvalue() > a.eig_floor()) {
        return Err(Error::NotInvertible {
            min_eigenvalue: a_eig.min_eigenvalue().as_f64(),
        });
    }

    let (uk, ua) = (&k_eig.eigenvectors, &a_eig.eigenvectors);
    let mut rotated = uk.transpose() * y * ua;
    for (t, mut col) in rotated.column_iter_mut().enumerate() {
        let at = a_eig.eigenvalues[t];
        for (i, v) in col.iter_mut().enumerate() {
            let ki = k_eig.eigenvalues[i].max(T::zero());
            *v /= ki * at + shift;
        }
    }
    Ok(uk * rotated * ua.transpose())
}

/// Reference solver for the same equation through the explicit `nT × nT`
/// system `(A ⊗ K + nλ·I)·vec(C) = vec(Y)` (column-major `vec`).
///
/// Intended for cross-checking [`solve_supervised`] on small problems.
pub fn solve_supervised_dense<T: Real>(
    k: &DMatrix<T>,
    y: &DMatrix<T>,
    a: &StructureMatrix<T>,
    lambda: f64,
) -> Result<DMatrix<T>> {
    check_inputs(k, y, a, lambda)?;
    let (n, t) = y.shape();
    if n * t > DENSE_ORACLE_LIMIT {
        return Err(Error::RefusedTooLarge {
            size: n * t,
            limit: DENSE_ORACLE_LIMIT,
        });
    }
    let mut system = a.matrix().kronecker(k);
    for i in 0..n * t {
        system[(i, i)] += T::lit(n as f64 * lambda);
    }
    let rhs = nalgebra::DVector::from_column_slice(y.as_slice());
    let sol = system.lu().solve(&rhs).ok_or(Error::NotInvertible {
        min_eigenvalue: f64::NAN,
    })?;
    Ok(DMatrix::from_column_slice(n, t, sol.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{objective, Hyperparams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, n: usize, t: usize) -> (DMatrix<f64>, DMatrix<f64>, StructureMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let k = &x * x.transpose();
        let y = DMatrix::from_fn(n, t, |_, _| rng.random_range(-1.0..1.0));
        let g = DMatrix::from_fn(t, t, |_, _| rng.random_range(-1.0..1.0));
        let a = StructureMatrix::new(&g * g.transpose() + DMatrix::identity(t, t) * 0.3).unwrap();
        (k, y, a)
    }

    fn residual(k: &DMatrix<f64>, y: &DMatrix<f64>, a: &StructureMatrix<f64>, c: &DMatrix<f64>, lambda: f64) -> f64 {
        let n = k.nrows() as f64;
        (k * c * a.matrix() + c * (n * lambda) - y).norm() / y.norm()
    }

    #[test]
    fn scalar_case() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let c = solve_supervised(&one, &one, &StructureMatrix::identity(1), 1.0).unwrap();
        assert_relative_eq!(c[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn identity_structure_decouples() {
        let (k, y, _) = instance(1, 6, 3);
        let lambda = 0.05;
        let c = solve_supervised(&k, &y, &StructureMatrix::identity(3), lambda).unwrap();
        let shifted = &k + DMatrix::identity(6, 6) * (6.0 * lambda);
        let lu = shifted.lu();
        for t in 0..3 {
            let col = lu.solve(&y.column(t).into_owned()).unwrap();
            for i in 0..6 {
                assert_relative_eq!(c[(i, t)], col[i], epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn matches_dense_reference() {
        let (k, y, a) = instance(7, 4, 3);
        let c = solve_supervised(&k, &y, &a, 0.1).unwrap();
        let d = solve_supervised_dense(&k, &y, &a, 0.1).unwrap();
        assert!((c - d).amax() <= 1e-8);
    }

    #[test]
    fn errors() {
        let (k, y, a) = instance(2, 4, 2);
        assert!(matches!(solve_supervised(&k, &y, &a, 0.0), Err(Error::InvalidInput(_))));
        let bad_k = -DMatrix::<f64>::identity(4, 4);
        assert!(matches!(solve_supervised(&bad_k, &y, &a, 0.1), Err(Error::NotPsd { .. })));
        let big = DMatrix::<f64>::identity(101, 101);
        let ybig = DMatrix::zeros(101, 2);
        assert!(matches!(
            solve_supervised_dense(&big, &ybig, &a, 0.1),
            Err(Error::RefusedTooLarge { .. })
        ));
    }

    #[test]
    fn objective_decreases_to_minimum() {
        let (k, y, a) = instance(4, 8, 3);
        let hp = Hyperparams { lambda: 0.2, ..Default::default() };
        let c = solve_supervised(&k, &y, &a, hp.lambda).unwrap();
        let best = objective(&k, &c, &a, &y, &hp).unwrap();
        assert!(best <= objective(&k, &DMatrix::zeros(8, 3), &a, &y, &hp).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let pert = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-0.1..0.1));
            assert!(best <= objective(&k, &(&c + pert), &a, &y, &hp).unwrap() + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn stationarity_residual(seed in 0u64..5000, n in 1usize..12, t in 1usize..5, lambda in 1e-3f64..10.0) {
            let (k, y, a) = instance(seed, n, t);
            let c = solve_supervised(&k, &y, &a, lambda).unwrap();
            prop_assert!(residual(&k, &y, &a, &c, lambda) <= 1e-8);
        }

        #[test]
        fn basis_independent(seed in 0u64..5000) {
            let (k, y, a) = instance(seed, 6, 3);
            let rebuilt = StructureMatrix::new(sym_eig(a.matrix()).unwrap().reconstruct()).unwrap();
            let c1 = solve_supervised(&k, &y, &a, 0.1).unwrap();
            let c2 = solve_supervised(&k, &y, &rebuilt, 0.1).unwrap();
            prop_assert!((c1 - c2).amax() <= 1e-10);
        }

        #[test]
        fn shrinks_with_lambda(seed in 0u64..5000) {
            let (k, y, a) = instance(seed, 7, 3);
            let mut prev = f64::INFINITY;
            for lambda in [1e-3, 1e-2, 0.1, 1.0, 10.0] {
                let norm = solve_supervised(&k, &y, &a, lambda).unwrap().norm();
                prop_assert!(norm <= prev * (1.0 + 1e-12));
                prev = norm;
            }
        }
    }
}
