//! Data model for vector-valued predictors with a separable kernel `k·A`,
//! prediction, and the regularized multi-task objective.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::{kernel_matrix, KernelSpec};
use crate::linalg::{ensure_finite, ensure_square, sym_eig, symmetrize};
use crate::scalar::Real;

/// Minimum eigenvalue admitted wherever `A⁻¹` is consumed.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-10;

/// Training inputs (`n × d`) and outputs (`n × T`, row `i` is `yᵢᵀ`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    x: DMatrix<T>,
    y: DMatrix<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(x: DMatrix<T>, y: DMatrix<T>) -> Result<Self> {
        if x.nrows() == 0 || y.ncols() == 0 {
            return Err(invalid("dataset needs at least one sample and one task"));
        }
        if x.nrows() != y.nrows() {
            return Err(invalid(format!(
                "inputs have {} rows but outputs have {}",
                x.nrows(),
                y.nrows()
            )));
        }
        ensure_finite(&x, "inputs")?;
        ensure_finite(&y, "outputs")?;
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<T> {
        &self.y
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_tasks(&self) -> usize {
        self.y.ncols()
    }

    /// Rows `rows` of the dataset, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Self::new(self.x.select_rows(rows), self.y.select_rows(rows))
    }
}

/// Symmetric PSD task-structure matrix `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureMatrix<T: Real> {
    matrix: DMatrix<T>,
    eig_floor: T,
}

impl<T: Real> StructureMatrix<T> {
    /// Validates symmetry (`‖A − Aᵀ‖_F ≤ 1e-10·max(1, ‖A‖_F)`) and
    /// positive semidefiniteness up to round-off.
    pub fn new(a: DMatrix<T>) -> Result<Self> {
        ensure_square(&a, "structure matrix")?;
        ensure_finite(&a, "structure matrix")?;
        if a.nrows() == 0 {
            return Err(invalid("structure matrix is empty"));
        }
        let scale = T::one().max(a.norm());
        if (&a - a.transpose()).norm() > T::tolerance(1e-10) * scale {
            return Err(invalid("structure matrix is not symmetric"));
        }
        let matrix = symmetrize(&a);
        let min = sym_eig(&matrix)?.min_eigenvalue();
        if min < -T::tolerance(1e-10) * scale {
            return Err(Error::NotPsd {
                min_eigenvalue: min.as_f64(),
            });
        }
        Ok(Self {
            matrix,
            eig_floor: T::lit(DEFAULT_EIG_FLOOR),
        })
    }

    pub fn identity(tasks: usize) -> Self {
        Self {
            matrix: DMatrix::identity(tasks, tasks),
            eig_floor: T::lit(DEFAULT_EIG_FLOOR),
        }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eig_floor(&self) -> T {
        self.eig_floor
    }

    pub fn min_eigenvalue(&self) -> Result<T> {
        Ok(sym_eig(&self.matrix)?.min_eigenvalue())
    }

    /// `A⁻¹`; fails unless every eigenvalue exceeds the floor.
    pub fn inverse(&self) -> Result<DMatrix<T>> {
        let eig = sym_eig(&self.matrix)?;
        let min = eig.min_eigenvalue();
        if !(min > self.eig_floor) {
            return Err(Error::NotInvertible {
                min_eigenvalue: min.as_f64(),
            });
        }
        Ok(eig.map(|v| T::one() / v))
    }

    /// `Σₜₛ |Aₜₛ|`, diagonal included.
    pub fn l1_norm(&self) -> T {
        self.matrix.iter().fold(T::zero(), |acc, v| acc + v.abs())
    }
}

/// Regularization and solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub lambda: f64,
    pub mu: f64,
    pub epsilon: f64,
    /// Relative outer tolerance: the loop stops once `|ΔS| < outer_tol·(1 + |S₁|)`.
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            mu: 0.5,
            epsilon: 0.1,
            outer_tol: 1e-10,
            inner_tol: 1e-7,
            max_outer: 100,
            max_inner: 10_000,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.lambda) {
            return Err(invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(invalid(format!("mu must lie in [0, 1], got {}", self.mu)));
        }
        if !positive(self.epsilon) {
            return Err(invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !positive(self.outer_tol) || !positive(self.inner_tol) {
            return Err(invalid("tolerances must be positive"));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(invalid("iteration caps must be positive"));
        }
        Ok(())
    }
}

/// Trained predictor `f(·) = Σᵢ k(·, xᵢ)·A·cᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskModel<T: Real> {
    pub train_x: DMatrix<T>,
    pub kernel: KernelSpec,
    /// `n × T`, row `i` is `cᵢᵀ`.
    pub coefficients: DMatrix<T>,
    pub structure: StructureMatrix<T>,
}

impl<T: Real> MultiTaskModel<T> {
    pub fn new(
        train_x: DMatrix<T>,
        kernel: KernelSpec,
        coefficients: DMatrix<T>,
        structure: StructureMatrix<T>,
    ) -> Result<Self> {
        if coefficients.nrows() != train_x.nrows() || coefficients.ncols() != structure.dim() {
            return Err(invalid(format!(
                "coefficients are {}x{}, expected {}x{}",
                coefficients.nrows(),
                coefficients.ncols(),
                train_x.nrows(),
                structure.dim()
            )));
        }
        Ok(Self {
            train_x,
            kernel,
            coefficients,
            structure,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.structure.dim()
    }

    /// `K_new · C · A` with `K_new = kernel_matrix(x_new, train_x)`.
    pub fn predict(&self, x_new: &DMatrix<T>) -> Result<DMatrix<T>> {
        if x_new.ncols() != self.train_x.ncols() {
            return Err(invalid(format!(
                "model expects {} features, got {}",
                self.train_x.ncols(),
                x_new.ncols()
            )));
        }
        let k_new = kernel_matrix(x_new, &self.train_x, &self.kernel)?;
        Ok(k_new * task_coefficients(&self.coefficients, &self.structure)?)
    }
}

/// `B = C·A`: coefficients of each task predictor on the kernel sections.
pub fn task_coefficients<T: Real>(c: &DMatrix<T>, a: &StructureMatrix<T>) -> Result<DMatrix<T>> {
    if c.ncols() != a.dim() {
        return Err(invalid(format!(
            "coefficients have {} columns but structure is {}x{}",
            c.ncols(),
            a.dim(),
            a.dim()
        )));
    }
    Ok(c * a.matrix())
}

fn check_kernel_and_tasks<T: Real>(k: &DMatrix<T>, b: &DMatrix<T>, a: &StructureMatrix<T>) -> Result<()> {
    ensure_square(k, "kernel matrix")?;
    if k.nrows() != b.nrows() || b.ncols() != a.dim() {
        return Err(invalid(format!(
            "kernel {}x{}, task coefficients {}x{} and structure {}x{} do not conform",
            k.nrows(),
            k.ncols(),
            b.nrows(),
            b.ncols(),
            a.dim(),
            a.dim()
        )));
    }
    Ok(())
}

fn trace_of_product<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    // tr(A·B) for symmetric A: Σ A ∘ B
    a.component_mul(b).sum()
}

/// `‖f‖²_H = tr(A⁻¹ · BᵀKB)`.
pub fn rkhs_norm_sq<T: Real>(k: &DMatrix<T>, b: &DMatrix<T>, a: &StructureMatrix<T>) -> Result<T> {
    check_kernel_and_tasks(k, b, a)?;
    let inv = a.inverse()?;
    let cov = symmetrize(&(b.transpose() * k * b));
    Ok(trace_of_product(&inv, &cov))
}

/// The individual terms of the multi-task objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms<T: Real> {
    /// `(1/n)·‖Y − K·B‖²_F`
    pub data_fit: T,
    /// `tr(A⁻¹BᵀKB)`
    pub rkhs_norm_sq: T,
    /// `tr(A⁻¹)`
    pub trace_inverse: T,
    /// `tr(A)`
    pub trace: T,
    /// `Σₜₛ|Aₜₛ|`
    pub l1: T,
    pub total: T,
}

/// Objective evaluated in the `(B, A)` parameterization, where `B = C·A`.
pub fn objective_terms<T: Real>(
    k: &DMatrix<T>,
    b: &DMatrix<T>,
    a: &StructureMatrix<T>,
    y: &DMatrix<T>,
    hp: &Hyperparams,
) -> Result<ObjectiveTerms<T>> {
    check_kernel_and_tasks(k, b, a)?;
    if y.shape() != b.shape() {
        return Err(invalid(format!(
            "outputs are {}x{}, expected {}x{}",
            y.nrows(),
            y.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let n = T::lit(k.nrows() as f64);
    let inv = a.inverse()?;
    let kb = k * b;
    let data_fit = (y - &kb).norm_squared() / n;
    let cov = symmetrize(&(b.transpose() * kb));
    let rkhs = trace_of_product(&inv, &cov);
    let trace_inverse = inv.trace();
    let trace = a.matrix().trace();
    let l1 = a.l1_norm();
    let (lambda, mu, eps) = (T::lit(hp.lambda), T::lit(hp.mu), T::lit(hp.epsilon));
    let total = data_fit + lambda * (rkhs + eps * trace_inverse + mu * trace + (T::one() - mu) * l1);
    Ok(ObjectiveTerms {
        data_fit,
        rkhs_norm_sq: rkhs,
        trace_inverse,
        trace,
        l1,
        total,
    })
}

/// The same objective as a function of the task coefficients `B` and `A`.
pub fn objective_in_tasks<T: Real>(
    k: &DMatrix<T>,
    b: &DMatrix<T>,
    a: &StructureMatrix<T>,
    y: &DMatrix<T>,
    hp: &Hyperparams,
) -> Result<T> {
    Ok(objective_terms(k, b, a, y, hp)?.total)
}

/// `(1/n)‖Y − K·C·A‖²_F + λ·(tr(A⁻¹BᵀKB) + ε·tr(A⁻¹) + μ·tr(A) + (1−μ)·‖A‖_ℓ1)` with `B = C·A`.
pub fn objective<T: Real>(
    k: &DMatrix<T>,
    c: &DMatrix<T>,
    a: &StructureMatrix<T>,
    y: &DMatrix<T>,
    hp: &Hyperparams,
) -> Result<T> {
    let b = task_coefficients(c, a)?;
    objective_in_tasks(k, &b, a, y, hp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rand_spd(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
        let g = rand_mat(rng, m, m);
        &g * g.transpose() + DMatrix::identity(m, m) * 0.2
    }

    #[test]
    fn task_coefficients_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = rand_mat(&mut rng, 4, 3);
        let i = StructureMatrix::identity(3);
        assert_eq!(task_coefficients(&c, &i).unwrap(), c);
        let a = StructureMatrix::new(rand_spd(&mut rng, 3)).unwrap();
        assert_eq!(task_coefficients(&DMatrix::zeros(4, 3), &a).unwrap(), DMatrix::zeros(4, 3));
        let b = task_coefficients(&c, &a).unwrap();
        for i in 0..4 {
            for t in 0..3 {
                let expect: f64 = (0..3).map(|s| c[(i, s)] * a.matrix()[(s, t)]).sum();
                assert_relative_eq!(b[(i, t)], expect, epsilon = 1e-14);
            }
        }
        assert!(task_coefficients(&c, &StructureMatrix::identity(2)).is_err());
    }

    #[test]
    fn structure_validation() {
        assert!(StructureMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        assert!(matches!(
            StructureMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])),
            Err(Error::NotPsd { .. })
        ));
        let singular = StructureMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).unwrap();
        assert!(matches!(singular.inverse(), Err(Error::NotInvertible { .. })));
    }

    #[test]
    fn predict_examples() {
        let x = DMatrix::from_row_slice(1, 1, &[1.0]);
        let a = StructureMatrix::new(DMatrix::from_row_slice(1, 1, &[3.0])).unwrap();
        let m = MultiTaskModel::new(x.clone(), KernelSpec::linear(), DMatrix::from_row_slice(1, 1, &[2.0]), a.clone())
            .unwrap();
        assert_eq!(m.predict(&x).unwrap()[(0, 0)], 6.0);
        let zero = MultiTaskModel::new(x.clone(), KernelSpec::linear(), DMatrix::zeros(1, 1), a).unwrap();
        assert_eq!(zero.predict(&x).unwrap()[(0, 0)], 0.0);
        assert!(m.predict(&DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn predict_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, d, t) = (3, 2, 2);
        let x = rand_mat(&mut rng, n, d);
        let c = rand_mat(&mut rng, n, t);
        let a = StructureMatrix::new(rand_spd(&mut rng, t)).unwrap();
        let spec = KernelSpec::gaussian(0.8).unwrap();
        let m = MultiTaskModel::new(x.clone(), spec, c.clone(), a.clone()).unwrap();
        let x_new = rand_mat(&mut rng, 2, d);
        let pred = m.predict(&x_new).unwrap();
        for r in 0..2 {
            let mut f = vec![0.0; t];
            for i in 0..n {
                let dist: f64 = (0..d).map(|j| (x_new[(r, j)] - x[(i, j)]).powi(2)).sum();
                let kv = (-dist / (2.0 * 0.8 * 0.8)).exp();
                for tt in 0..t {
                    for s in 0..t {
                        f[tt] += kv * a.matrix()[(tt, s)] * c[(i, s)];
                    }
                }
            }
            for tt in 0..t {
                assert_relative_eq!(pred[(r, tt)], f[tt], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn rkhs_norm_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = rand_mat(&mut rng, 4, 3);
        let k = DMatrix::identity(4, 4);
        let i = StructureMatrix::identity(3);
        assert_relative_eq!(rkhs_norm_sq(&k, &b, &i).unwrap(), b.norm_squared(), epsilon = 1e-13);
        assert_eq!(rkhs_norm_sq(&k, &DMatrix::zeros(4, 3), &i).unwrap(), 0.0);
    }

    #[test]
    fn rkhs_norm_matches_double_sum() {
        // ‖f‖² = Σₜₛ (A⁻¹)ₜₛ ⟨fₜ, fₛ⟩ with ⟨fₜ, fₛ⟩ = Σᵢⱼ Bᵢₜ Kᵢⱼ Bⱼₛ
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let g = rand_mat(&mut rng, 2, 2);
            let k = &g * g.transpose();
            let b = rand_mat(&mut rng, 2, 2);
            let am = rand_spd(&mut rng, 2);
            let det = am[(0, 0)] * am[(1, 1)] - am[(0, 1)] * am[(1, 0)];
            let inv = [[am[(1, 1)] / det, -am[(0, 1)] / det], [-am[(1, 0)] / det, am[(0, 0)] / det]];
            let mut expect = 0.0;
            for t in 0..2 {
                for s in 0..2 {
                    let mut inner = 0.0;
                    for i in 0..2 {
                        for j in 0..2 {
                            inner += b[(i, t)] * k[(i, j)] * b[(j, s)];
                        }
                    }
                    expect += inv[t][s] * inner;
                }
            }
            let a = StructureMatrix::new(am).unwrap();
            let got = rkhs_norm_sq(&k, &b, &a).unwrap();
            assert!(got >= -1e-10);
            assert_relative_eq!(got, expect, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn objective_trivial_values() {
        let hp = Hyperparams {
            lambda: 1.0,
            mu: 1.0,
            epsilon: 1.0,
            ..Hyperparams::default()
        };
        let k = DMatrix::identity(2, 2);
        let z = DMatrix::zeros(2, 3);
        let i = StructureMatrix::identity(3);
        assert_relative_eq!(objective(&k, &z, &i, &z, &hp).unwrap(), 6.0);

        let y = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        for mu in [0.0, 0.3, 1.0] {
            let hp = Hyperparams {
                lambda: 0.7,
                mu,
                epsilon: 0.2,
                ..Hyperparams::default()
            };
            let expect = y.norm_squared() / 2.0 + 0.7 * (0.2 * 3.0 + mu * 3.0 + (1.0 - mu) * 3.0);
            assert_relative_eq!(objective(&k, &z, &i, &y, &hp).unwrap(), expect, epsilon = 1e-13);
        }
    }

    #[test]
    fn objective_matches_pointwise_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, t, d) = (3, 2, 2);
        let x = rand_mat(&mut rng, n, d);
        let k = x.clone() * x.transpose();
        let c = rand_mat(&mut rng, n, t);
        let y = rand_mat(&mut rng, n, t);
        let am = rand_spd(&mut rng, t);
        let a = StructureMatrix::new(am.clone()).unwrap();
        let hp = Hyperparams {
            lambda: 0.3,
            mu: 0.4,
            epsilon: 0.05,
            ..Hyperparams::default()
        };
        // f(xᵢ) = Σⱼ k(xᵢ,xⱼ) A cⱼ, squared loss averaged over samples.
        let mut loss = 0.0;
        for i in 0..n {
            for tt in 0..t {
                let mut f = 0.0;
                for j in 0..n {
                    for s in 0..t {
                        f += k[(i, j)] * am[(tt, s)] * c[(j, s)];
                    }
                }
                loss += (y[(i, tt)] - f).powi(2);
            }
        }
        loss /= n as f64;
        let det = am[(0, 0)] * am[(1, 1)] - am[(0, 1)].powi(2);
        let inv = [[am[(1, 1)] / det, -am[(0, 1)] / det], [-am[(0, 1)] / det, am[(0, 0)] / det]];
        let b = &c * &am;
        let mut norm = 0.0;
        for tt in 0..t {
            for s in 0..t {
                let mut inner = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        inner += b[(i, tt)] * k[(i, j)] * b[(j, s)];
                    }
                }
                norm += inv[tt][s] * inner;
            }
        }
        let l1: f64 = am.iter().map(|v| v.abs()).sum();
        let expect = loss + 0.3 * (norm + 0.05 * (inv[0][0] + inv[1][1]) + 0.4 * am.trace() + 0.6 * l1);
        assert_relative_eq!(objective(&k, &c, &a, &y, &hp).unwrap(), expect, max_relative = 1e-11);
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        for bad in [
            Hyperparams { lambda: 0.0, ..Default::default() },
            Hyperparams { mu: 1.5, ..Default::default() },
            Hyperparams { epsilon: -1.0, ..Default::default() },
            Hyperparams { max_inner: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
