//! Alternating minimization over predictors and task structure, the
//! fixed-structure baselines, and cross-validated model selection.

use std::time::Instant;

use log::{debug, info};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evaluation::{accuracy, argmax_rows, nmse};
use crate::kernels::{gram_matrix, KernelSpec};
use crate::model::{objective_in_tasks, task_coefficients, Dataset, Hyperparams, MultiTaskModel, StructureMatrix};
use crate::scalar::Real;
use crate::structure::{solve_structure, structure_subproblem, SolveStatus, SplitState, StructureSolverOptions};
use crate::supervised::solve_supervised;

/// What is learned.
#[derive(Debug, Clone, PartialEq)]
pub enum FitMode<T: Real> {
    /// Predictors and a sparse structure, jointly.
    Skmtl,
    /// Predictors for a given, strictly positive definite structure.
    FixedStructure(StructureMatrix<T>),
    /// Independent tasks: `A = I`.
    SingleTask,
}

impl<T: Real> FitMode<T> {
    pub fn name(&self) -> &'static str {
        match self {
            FitMode::Skmtl => "skmtl",
            FitMode::FixedStructure(_) => "fixed",
            FitMode::SingleTask => "stl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Objective at `(C₁, A₀)` followed by its value after each
    /// supervised/structure pair.
    pub objective_trace: Vec<f64>,
    /// Objective after every half step, starting at `(C₁, A₀)`.
    pub half_step_trace: Vec<f64>,
    /// Inner iterations of each structure solve.
    pub inner_iters: Vec<usize>,
    /// Structure solves that hit the iteration cap.
    pub inner_not_converged: usize,
    pub status: FitStatus,
    /// Seconds.
    pub wall_time: f64,
}

fn checked(value: f64, iteration: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Diverged { iteration })
    }
}

/// Fits a model on `data`.
///
/// In [`FitMode::Skmtl`] the loop alternates a supervised solve for `C` at
/// fixed `A` with a structure solve for `A` at fixed predictor `f`
/// (`B = C·A` held constant, so `C ← B·A⁻¹` afterwards). It stops when the
/// objective changes by less than `outer_tol·(1 + |S₁|)` between pairs.
pub fn fit<T: Real>(
    data: &Dataset<T>,
    kernel: &KernelSpec,
    hp: &Hyperparams,
    mode: &FitMode<T>,
) -> Result<(MultiTaskModel<T>, FitReport)> {
    hp.validate()?;
    let start = Instant::now();
    let k = gram_matrix(data.x(), kernel)?;
    let y = data.y();
    let tasks = data.n_tasks();

    let fixed = match mode {
        FitMode::Skmtl => None,
        FitMode::SingleTask => Some(StructureMatrix::identity(tasks)),
        FitMode::FixedStructure(a) => {
            if a.dim() != tasks {
                return Err(invalid(format!(
                    "fixed structure is {}x{} but data has {tasks} tasks",
                    a.dim(),
                    a.dim()
                )));
            }
            a.inverse()?;
            Some(a.clone())
        }
    };

    if let Some(a) = fixed {
        let c = solve_supervised(&k, y, &a, hp.lambda)?;
        let obj = checked(objective_in_tasks(&k, &task_coefficients(&c, &a)?, &a, y, hp)?.as_f64(), 0)?;
        let report = FitReport {
            objective_trace: vec![obj],
            half_step_trace: vec![obj],
            inner_iters: Vec::new(),
            inner_not_converged: 0,
            status: FitStatus::Converged,
            wall_time: start.elapsed().as_secs_f64(),
        };
        return Ok((MultiTaskModel::new(data.x().clone(), *kernel, c, a)?, report));
    }

    let opts = StructureSolverOptions {
        inner_tol: hp.inner_tol,
        max_inner: hp.max_inner,
        ..Default::default()
    };
    let mut a = StructureMatrix::identity(tasks);
    let mut c = solve_supervised(&k, y, &a, hp.lambda)?;
    let mut b = task_coefficients(&c, &a)?;
    let first = checked(objective_in_tasks(&k, &b, &a, y, hp)?.as_f64(), 0)?;
    let delta = hp.outer_tol * (1.0 + first.abs());
    let mut objective_trace = vec![first];
    let mut half_step_trace = vec![first];
    let mut inner_iters = Vec::new();
    let mut inner_not_converged = 0;
    let mut warm: Option<SplitState<T>> = None;
    let mut status = FitStatus::MaxIterations;

    for iteration in 1..=hp.max_outer {
        let prob = structure_subproblem(&k, &b, hp.mu, hp.epsilon)?;
        let sol = solve_structure(&prob, warm.as_ref(), &opts)?;
        inner_iters.push(sol.diagnostics.iterations);
        if sol.diagnostics.status == SolveStatus::NotConverged {
            inner_not_converged += 1;
        }
        warm = Some(sol.state);
        a = sol.structure;
        c = &b * a.inverse()?;

        let current = checked(objective_in_tasks(&k, &b, &a, y, hp)?.as_f64(), iteration)?;
        half_step_trace.push(current);
        let previous = *objective_trace.last().expect("trace starts non-empty");
        objective_trace.push(current);
        debug!(
            "outer {iteration}: objective {current:.10e}, inner iterations {}",
            sol.diagnostics.iterations
        );
        if (current - previous).abs() < delta {
            status = FitStatus::Converged;
            break;
        }
        if iteration == hp.max_outer {
            break;
        }

        c = solve_supervised(&k, y, &a, hp.lambda)?;
        b = task_coefficients(&c, &a)?;
        half_step_trace.push(checked(objective_in_tasks(&k, &b, &a, y, hp)?.as_f64(), iteration)?);
    }
    info!(
        "fit finished after {} outer iterations ({:?}), objective {:.10e}",
        inner_iters.len(),
        status,
        objective_trace.last().copied().unwrap_or(f64::NAN)
    );

    let report = FitReport {
        objective_trace,
        half_step_trace,
        inner_iters,
        inner_not_converged,
        status,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((MultiTaskModel::new(data.x().clone(), *kernel, c, a)?, report))
}

/// How validation folds are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    /// Normalized mean squared error, lower is better.
    #[default]
    Nmse,
    /// One-vs-all accuracy with labels taken as the argmax of each output row.
    Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub params: Hyperparams,
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
    pub fold_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: Hyperparams,
    pub best_index: usize,
    pub table: Vec<CvCell>,
}

/// Validation index sets of a seeded shuffled split into `folds` parts.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(invalid(format!("need at least two folds, got {folds}")));
    }
    if n < folds {
        return Err(invalid(format!("{n} samples cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (pos, idx) in order.into_iter().enumerate() {
        out[pos % folds].push(idx);
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    Ok(out)
}

fn score_fold<T: Real>(
    data: &Dataset<T>,
    kernel: &KernelSpec,
    hp: &Hyperparams,
    mode: &FitMode<T>,
    validation: &[usize],
    scoring: Scoring,
) -> Result<f64> {
    let train: Vec<usize> = (0..data.n_samples()).filter(|i| validation.binary_search(i).is_err()).collect();
    let train_set = data.subset(&train)?;
    let val_set = data.subset(validation)?;
    let (model, _) = fit(&train_set, kernel, hp, mode)?;
    let pred = model.predict(val_set.x())?;
    match scoring {
        Scoring::Nmse => nmse(val_set.y(), &pred),
        Scoring::Accuracy => accuracy(&argmax_rows(val_set.y()), &pred),
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// K-fold cross-validation over `grid`.
///
/// Fold × cell jobs run on the current rayon pool; the table does not depend
/// on the schedule. The best cell minimizes mean nMSE (or maximizes mean
/// accuracy); exact ties go to the larger `λ`, then the larger `μ`.
pub fn cv_grid_search<T: Real>(
    data: &Dataset<T>,
    kernel: &KernelSpec,
    grid: &[Hyperparams],
    folds: usize,
    mode: &FitMode<T>,
    seed: u64,
    scoring: Scoring,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(invalid("hyperparameter grid is empty"));
    }
    for hp in grid {
        hp.validate()?;
    }
    let splits = fold_assignment(data.n_samples(), folds, seed)?;
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|c| (0..folds).map(move |f| (c, f))).collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(cell, fold)| score_fold(data, kernel, &grid[cell], mode, &splits[fold], scoring))
        .collect::<Result<Vec<f64>>>()?;

    let table: Vec<CvCell> = grid
        .iter()
        .enumerate()
        .map(|(cell, params)| {
            let fold_scores = scores[cell * folds..(cell + 1) * folds].to_vec();
            let (mean, std) = mean_std(&fold_scores);
            CvCell {
                params: *params,
                mean,
                std,
                fold_scores,
            }
        })
        .collect();

    let better = |a: &CvCell, b: &CvCell| -> bool {
        let (sa, sb) = match scoring {
            Scoring::Nmse => (a.mean, b.mean),
            Scoring::Accuracy => (-a.mean, -b.mean),
        };
        if sa != sb {
            return sa < sb;
        }
        if a.params.lambda != b.params.lambda {
            return a.params.lambda > b.params.lambda;
        }
        a.params.mu > b.params.mu
    };
    let mut best_index = 0;
    for i in 1..table.len() {
        if better(&table[i], &table[best_index]) {
            best_index = i;
        }
    }
    Ok(CvResult {
        best: table[best_index].params,
        best_index,
        table,
    })
}

/// One-vs-all targets: `+1` for the labelled class, `−1` elsewhere.
pub fn one_vs_all_targets<T: Real>(labels: &[usize], classes: usize) -> Result<DMatrix<T>> {
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(invalid(format!("label {bad} outside [0, {classes})")));
    }
    Ok(DMatrix::from_fn(labels.len(), classes, |i, j| {
        if labels[i] == j {
            T::one()
        } else {
            -T::one()
        }
    }))
}
