//! Primal-dual splitting solver for the structure subproblem
//!
//! ```text
//! min_{A ≻ 0}  tr(A⁻¹·P) + μ·tr(A) + (1 − μ)·‖A‖_ℓ1,     P = BᵀKB + εI
//! ```
//!
//! written as `G(A) + H₁(A) + H₂(L(A))` with `G = μ·tr`, `H₁ = (1 − μ)‖·‖_ℓ1`,
//! `H₂ = tr((·)⁻¹)` restricted to positive definite matrices, and
//! `L(A) = M·A·M` for `M = P^{-1/2}`, so that `tr(L(A)⁻¹) = tr(A⁻¹P)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{ensure_square, sym_eig, symmetrize};
use crate::model::{StructureMatrix, DEFAULT_EIG_FLOOR};
use crate::scalar::Real;

use super::prox::{prox_trace_inverse, shrink};

/// Objective snapshots are taken every this many iterations, after the same burn-in.
const SNAPSHOT_EVERY: usize = 10;

/// The structure subproblem for fixed task coefficients.
#[derive(Debug, Clone)]
pub struct StructureProblem<T: Real> {
    /// `BᵀKB + εI`
    pub p: DMatrix<T>,
    /// `P^{-1/2}`
    pub m: DMatrix<T>,
    /// Squared largest eigenvalue of `M`; both step sizes are `1/σ`.
    pub sigma: T,
    pub mu: T,
    /// Largest eigenvalue of `P`.
    pub lambda_max: T,
}

impl<T: Real> StructureProblem<T> {
    /// Builds the problem directly from a preconditioned covariance `P`.
    pub fn new(p: DMatrix<T>, mu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(invalid(format!("mu must lie in [0, 1], got {mu}")));
        }
        ensure_square(&p, "task covariance")?;
        let p = symmetrize(&p);
        let eig = sym_eig(&p)?;
        let min = eig.min_eigenvalue();
        let max = eig.max_eigenvalue();
        if !(min >= T::tolerance(crate::linalg::INVERSE_EIG_FLOOR)) {
            return Err(crate::error::Error::NotInvertible {
                min_eigenvalue: min.as_f64(),
            });
        }
        let m = eig.map(|v| T::one() / v.sqrt());
        Ok(Self {
            p,
            m,
            sigma: T::one() / min,
            mu: T::lit(mu),
            lambda_max: max,
        })
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    /// `tr(A⁻¹P) + μ·tr(A) + (1 − μ)·‖A‖_ℓ1`; fails unless `A` is positive definite.
    pub fn objective(&self, a: &DMatrix<T>) -> Result<T> {
        let s = StructureMatrix::new(a.clone())?;
        let inv = s.inverse()?;
        Ok(inv.component_mul(&self.p).sum() + self.mu * a.trace() + (T::one() - self.mu) * s.l1_norm())
    }

    /// The same problem for `c·P`. Its minimizer is `√c` times this one's.
    fn scaled(&self, c: T) -> Self {
        Self {
            p: &self.p * c,
            m: &self.m / c.sqrt(),
            sigma: self.sigma / c,
            mu: self.mu,
            lambda_max: self.lambda_max * c,
        }
    }

    fn objective_if_feasible(&self, a: &DMatrix<T>) -> Option<T> {
        self.objective(a).ok().filter(|v| v.is_finite())
    }
}

/// `P = BᵀKB + εI` and its derived step data.
pub fn structure_subproblem<T: Real>(k: &DMatrix<T>, b: &DMatrix<T>, mu: f64, epsilon: f64) -> Result<StructureProblem<T>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    ensure_square(k, "kernel matrix")?;
    if k.nrows() != b.nrows() {
        return Err(invalid(format!(
            "kernel is {}x{} but task coefficients have {} rows",
            k.nrows(),
            k.ncols(),
            b.nrows()
        )));
    }
    let t = b.ncols();
    let p = symmetrize(&(b.transpose() * k * b)) + DMatrix::identity(t, t) * T::lit(epsilon);
    StructureProblem::new(p, mu)
}

/// Primal and dual iterates of the splitting scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitState<T: Real> {
    pub a: DMatrix<T>,
    pub d: DMatrix<T>,
    pub iter: usize,
    pub primal_change: T,
    pub dual_change: T,
}

impl<T: Real> SplitState<T> {
    /// `A₀ = D₀ = I`.
    pub fn identity(tasks: usize) -> Self {
        Self {
            a: DMatrix::identity(tasks, tasks),
            d: DMatrix::identity(tasks, tasks),
            iter: 0,
            primal_change: T::zero(),
            dual_change: T::zero(),
        }
    }
}

/// How the dual iterate is recovered from the trace-inverse prox.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DualUpdate {
    /// `D⁺ = P̃ − (1/σ)·prox_{σ·tr(·⁻¹)}(σ·P̃)`, the Moreau identity at dual step `1/σ`.
    #[default]
    Moreau,
    /// `D⁺ = P̃ − prox_{σ·tr(·⁻¹)}(σ·P̃)`, without the `1/σ` factor.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureSolverOptions {
    pub inner_tol: f64,
    pub max_inner: usize,
    pub dual_update: DualUpdate,
}

impl Default for StructureSolverOptions {
    fn default() -> Self {
        Self {
            inner_tol: 1e-7,
            max_inner: 10_000,
            dual_update: DualUpdate::Moreau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_change: f64,
    pub dual_change: f64,
    /// Objective of the returned matrix.
    pub objective: f64,
    /// Objective of the starting primal iterate, when it was feasible.
    pub initial_objective: Option<f64>,
    /// True when the returned matrix is not the last primal iterate
    /// (an earlier snapshot or the starting point scored better).
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct StructureSolution<T: Real> {
    pub structure: StructureMatrix<T>,
    pub state: SplitState<T>,
    pub diagnostics: StructureDiagnostics,
}

/// Symmetrized `A`, eigenvalues raised to twice the floor only when needed
/// so exact zeros survive whenever `A` is already well inside the cone.
/// Twice, because consumers of `A⁻¹` require eigenvalues strictly above it.
fn finalize<T: Real>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    let a = symmetrize(a);
    let floor = T::lit(DEFAULT_EIG_FLOOR);
    let eig = sym_eig(&a)?;
    if eig.min_eigenvalue() > floor * T::lit(2.0) {
        Ok(a)
    } else {
        Ok(eig.map(|v| v.max(floor * T::lit(2.0))))
    }
}

/// Runs the primal-dual iteration until both `‖ΔA‖_F` and `‖ΔD‖_F` fall
/// below `inner_tol`, or `max_inner` iterations elapse.
///
/// The iteration runs on `P/λmax(P)` and the result is mapped back, so the
/// iteration count depends on the conditioning of `P` but not on its scale.
/// Step changes in the returned state are measured in those normalized units.
///
/// The returned matrix never scores worse on the subproblem objective than
/// the feasible starting iterate.
pub fn solve_structure<T: Real>(
    prob: &StructureProblem<T>,
    init: Option<&SplitState<T>>,
    opts: &StructureSolverOptions,
) -> Result<StructureSolution<T>> {
    if !(opts.inner_tol > 0.0) || opts.max_inner == 0 {
        return Err(invalid("inner tolerance and iteration cap must be positive"));
    }
    let t = prob.dim();
    let mut state = match init {
        Some(s) if s.a.shape() == (t, t) && s.d.shape() == (t, t) => s.clone(),
        Some(s) => {
            return Err(invalid(format!(
                "warm start is {}x{}, problem is {t}x{t}",
                s.a.nrows(),
                s.a.ncols()
            )))
        }
        None => SplitState::identity(t),
    };
    state.iter = 0;
    let start_a = state.a.clone();

    let c = T::one() / prob.lambda_max;
    let root_c = c.sqrt();
    let outer = prob;
    let prob = &outer.scaled(c);
    state.a *= root_c;
    state.d *= c;

    let tau = T::one() / prob.sigma;
    let threshold = (T::one() - prob.mu) * tau;
    let tol = T::lit(opts.inner_tol);
    let identity_mu = DMatrix::<T>::identity(t, t) * prob.mu;
    let m = &prob.m;

    let initial_objective = outer.objective_if_feasible(&start_a);
    let mut best: Option<(T, DMatrix<T>)> = None;
    let mut status = SolveStatus::NotConverged;

    for i in 1..=opts.max_inner {
        let grad = symmetrize(&(&identity_mu + m * &state.d * m));
        let a_next = (&state.a - grad * tau).map(|v| shrink(v, threshold));
        let extrapolated = &a_next * T::lit(2.0) - &state.a;
        let p_tilde = symmetrize(&(&state.d + m * extrapolated * m * tau));
        let prox = prox_trace_inverse(&(&p_tilde * prob.sigma), prob.sigma)?;
        let d_next = match opts.dual_update {
            DualUpdate::Moreau => &p_tilde - prox * tau,
            DualUpdate::Literal => &p_tilde - prox,
        };

        state.primal_change = (&a_next - &state.a).norm();
        state.dual_change = (&d_next - &state.d).norm();
        state.a = a_next;
        state.d = d_next;
        state.iter = i;

        if !state.primal_change.is_finite() || !state.dual_change.is_finite() {
            break;
        }
        if state.primal_change < tol && state.dual_change < tol {
            status = SolveStatus::Converged;
            break;
        }
        if i >= SNAPSHOT_EVERY && i % SNAPSHOT_EVERY == 0 {
            if let Some(obj) = prob.objective_if_feasible(&state.a) {
                if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                    best = Some((obj, state.a.clone()));
                }
            }
        }
    }

    state.a /= root_c;
    state.d /= c;
    let prob = outer;

    let mut fallback = false;
    let mut chosen = finalize(&state.a)?;
    let mut chosen_obj = prob.objective_if_feasible(&chosen);
    if status == SolveStatus::NotConverged {
        if let Some((_, a)) = best {
            let a = finalize(&(a / root_c))?;
            let obj = prob.objective_if_feasible(&a);
            if let Some(obj) = obj.filter(|o| chosen_obj.is_none_or(|cur| *o < cur)) {
                chosen = a;
                chosen_obj = Some(obj);
                fallback = true;
            }
        }
    }
    if let Some(init_obj) = initial_objective {
        if chosen_obj.is_none_or(|cur| init_obj < cur) {
            chosen = finalize(&start_a)?;
            chosen_obj = Some(init_obj);
            fallback = true;
        }
    }
    let objective = chosen_obj.ok_or_else(|| invalid("structure solver produced no feasible iterate"))?;

    Ok(StructureSolution {
        structure: StructureMatrix::new(chosen)?,
        diagnostics: StructureDiagnostics {
            status,
            iterations: state.iter,
            primal_change: state.primal_change.as_f64(),
            dual_change: state.dual_change.as_f64(),
            objective: objective.as_f64(),
            initial_objective: initial_objective.map(|v| v.as_f64()),
            fallback,
        },
        state,
    })
}
