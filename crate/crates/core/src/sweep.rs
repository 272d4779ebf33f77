//! Sparsity sweeps comparing the learned structure with the single-task and
//! ground-truth baselines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::evaluation::{default_support_threshold, nmse, support_recovery};
use crate::kernels::KernelSpec;
use crate::linalg::{clamp_eigenvalues, sym_eig};
use crate::model::{Hyperparams, StructureMatrix};
use crate::scalar::Real;
use crate::synth::{generate, sweep_configs, SweepPoint, SynthConfig, SynthInstance};
use crate::trainer::{cv_grid_search, fit, FitMode, Scoring};

/// Relative eigenvalue floor used to make a ground-truth structure usable as
/// a fixed, invertible `A`.
pub const GT_EIG_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SweepMode {
    Skmtl,
    Stl,
    Gt,
}

impl SweepMode {
    pub const ALL: [SweepMode; 3] = [SweepMode::Skmtl, SweepMode::Stl, SweepMode::Gt];

    pub fn label(self) -> &'static str {
        match self {
            SweepMode::Skmtl => "SKMTL",
            SweepMode::Stl => "STL",
            SweepMode::Gt => "GT",
        }
    }
}

/// Hyperparameter grid as the Cartesian product of its axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub lambdas: Vec<f64>,
    pub mus: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Tolerances and caps shared by every cell.
    pub solver: Hyperparams,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lambdas: vec![1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0],
            mus: vec![0.5, 0.8, 0.9, 0.95, 1.0],
            epsilons: vec![0.1],
            solver: Hyperparams::default(),
        }
    }
}

impl GridSpec {
    pub fn cells(&self) -> Result<Vec<Hyperparams>> {
        let mut out = Vec::new();
        for &lambda in &self.lambdas {
            for &mu in &self.mus {
                for &epsilon in &self.epsilons {
                    let hp = Hyperparams {
                        lambda,
                        mu,
                        epsilon,
                        ..self.solver
                    };
                    hp.validate()?;
                    out.push(hp);
                }
            }
        }
        if out.is_empty() {
            return Err(invalid("hyperparameter grid is empty"));
        }
        Ok(out)
    }

    /// Cells for a fixed structure, where only `λ` changes the predictor.
    pub fn lambda_cells(&self) -> Result<Vec<Hyperparams>> {
        let first = *self.cells()?.first().expect("grid checked nonempty");
        Ok(self.lambdas.iter().map(|&lambda| Hyperparams { lambda, ..first }).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Generator settings; `support_ratio`, `tasks` and `seed` are overridden
    /// per instance.
    pub base: SynthConfig,
    pub ratios: Vec<f64>,
    pub tasks: Vec<usize>,
    pub replicates: usize,
    pub grid: GridSpec,
    pub folds: usize,
    pub kernel: KernelSpec,
    pub modes: Vec<SweepMode>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            base: SynthConfig::default(),
            ratios: vec![0.1, 0.2, 0.3, 0.5, 1.0],
            tasks: vec![10],
            replicates: 10,
            grid: GridSpec::default(),
            folds: 5,
            kernel: KernelSpec::linear(),
            modes: SweepMode::ALL.to_vec(),
        }
    }
}

/// One row of `sweep_results.csv`. `nmse` and `support_f1` are NaN when the
/// cell failed; the reason is in `failure`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub tasks: usize,
    pub replicate: usize,
    pub mode: SweepMode,
    pub nmse: f64,
    pub support_f1: f64,
    pub wall_time: f64,
    pub lambda: f64,
    pub mu: f64,
    pub failure: Option<String>,
}

/// Ground-truth structure made strictly positive definite.
pub fn ground_truth_structure<T: Real>(a: &DMatrix<T>) -> Result<StructureMatrix<T>> {
    let eig = sym_eig(a)?;
    let scale = eig.min_eigenvalue().abs().max(eig.max_eigenvalue().abs());
    if scale == T::zero() {
        return Err(invalid("ground-truth structure is zero"));
    }
    StructureMatrix::new(clamp_eigenvalues(a, scale * T::lit(GT_EIG_FLOOR))?)
}

struct CellOutcome {
    nmse: f64,
    support_f1: f64,
    lambda: f64,
    mu: f64,
}

fn run_cell<T: Real>(
    cfg: &SweepConfig,
    point: &SweepPoint,
    inst: &SynthInstance<T>,
    mode: SweepMode,
) -> Result<CellOutcome> {
    let (fit_mode, grid) = match mode {
        SweepMode::Skmtl => (FitMode::Skmtl, cfg.grid.cells()?),
        SweepMode::Stl => (FitMode::SingleTask, cfg.grid.lambda_cells()?),
        SweepMode::Gt => (
            FitMode::FixedStructure(ground_truth_structure(&inst.a_corrupted)?),
            cfg.grid.lambda_cells()?,
        ),
    };
    let cv = cv_grid_search(&inst.train, &cfg.kernel, &grid, cfg.folds, &fit_mode, point.seed, Scoring::Nmse)?;
    let (model, _) = fit(&inst.train, &cfg.kernel, &cv.best, &fit_mode)?;
    let pred = model.predict(inst.test.x())?;
    let score = nmse(inst.test.y(), &pred)?;
    let est = model.structure.matrix();
    let support = support_recovery(est, &inst.a_true, default_support_threshold(est))?;
    Ok(CellOutcome {
        nmse: score,
        support_f1: support.f1,
        lambda: cv.best.lambda,
        mu: cv.best.mu,
    })
}

/// Runs the sweep on the current rayon pool. Rows come back ordered by
/// (ratio, T, replicate, mode) whatever the schedule.
pub fn run_sweep<T: Real>(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.modes.is_empty() {
        return Err(invalid("no sweep modes selected"));
    }
    cfg.grid.cells()?;
    let points = sweep_configs(&cfg.base, &cfg.ratios, &cfg.tasks, cfg.replicates)?;
    let mut modes = cfg.modes.clone();
    modes.sort();
    modes.dedup();

    let instances: Vec<(SweepPoint, std::result::Result<SynthInstance<T>, String>)> = points
        .par_iter()
        .map(|(point, synth)| (*point, generate::<T>(synth).map_err(|e| e.to_string())))
        .collect();
    let jobs: Vec<(usize, SweepMode)> = (0..instances.len())
        .flat_map(|i| modes.iter().map(move |&m| (i, m)))
        .collect();

    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(i, mode)| {
            let (point, inst) = &instances[i];
            let start = Instant::now();
            let outcome = match inst {
                Ok(inst) => run_cell(cfg, point, inst, mode).map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            };
            let wall_time = start.elapsed().as_secs_f64();
            let mut row = SweepRow {
                ratio: point.ratio,
                tasks: point.tasks,
                replicate: point.replicate,
                mode,
                nmse: f64::NAN,
                support_f1: f64::NAN,
                wall_time,
                lambda: f64::NAN,
                mu: f64::NAN,
                failure: None,
            };
            match outcome {
                Ok(o) => {
                    row.nmse = o.nmse;
                    row.support_f1 = o.support_f1;
                    row.lambda = o.lambda;
                    row.mu = o.mu;
                    info!(
                        "ratio {} T {} replicate {} {}: nmse {:.4}",
                        point.ratio,
                        point.tasks,
                        point.replicate,
                        mode.label(),
                        o.nmse
                    );
                }
                Err(e) => {
                    warn!(
                        "ratio {} T {} replicate {} {} failed: {e}",
                        point.ratio,
                        point.tasks,
                        point.replicate,
                        mode.label()
                    );
                    row.failure = Some(e);
                }
            }
            row
        })
        .collect();
    Ok(rows)
}

pub const RESULTS_HEADER: &str = "ratio,T,replicate,mode,nmse,support_f1,wall_time";

/// `sweep_results.csv`. With `with_wall_time = false` the last column is
/// left empty, which makes runs byte-comparable.
pub fn results_csv(rows: &[SweepRow], with_wall_time: bool) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let wall = if with_wall_time {
            format!("{:.6}", r.wall_time)
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.ratio,
            r.tasks,
            r.replicate,
            r.mode.label(),
            r.nmse,
            r.support_f1,
            wall
        );
    }
    out
}

/// Failed cells with their error messages.
pub fn failures_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("ratio,T,replicate,mode,failure\n");
    for r in rows {
        if let Some(f) = &r.failure {
            let _ = writeln!(
                out,
                "{},{},{},{},\"{}\"",
                r.ratio,
                r.tasks,
                r.replicate,
                r.mode.label(),
                f.replace('"', "\"\"")
            );
        }
    }
    out
}

/// Hyperparameters picked by cross-validation for every cell.
pub fn selection_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("ratio,T,replicate,mode,lambda,mu\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.ratio, r.tasks, r.replicate, r.mode.label(), r.lambda, r.mu);
    }
    out
}

/// Mean and dispersion of one group of successful cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub ratio: f64,
    pub tasks: Option<usize>,
    pub mode: SweepMode,
    pub count: usize,
    pub failed: usize,
    pub mean_nmse: f64,
    /// Sample standard deviation.
    pub std_nmse: f64,
    pub mean_support_f1: f64,
    pub std_support_f1: f64,
}

impl SummaryRow {
    pub fn stderr_nmse(&self) -> f64 {
        self.std_nmse / (self.count as f64).sqrt()
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates rows per (ratio, mode), pooling task counts, or per
/// (ratio, T, mode) when `by_tasks` is set. Ratios keep their sweep order.
pub fn summarize(rows: &[SweepRow], by_tasks: bool) -> Vec<SummaryRow> {
    type Key = (usize, Option<usize>, SweepMode);
    let mut ratio_order: Vec<f64> = Vec::new();
    let mut groups: BTreeMap<Key, Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let ri = match ratio_order.iter().position(|&x| x == r.ratio) {
            Some(i) => i,
            None => {
                ratio_order.push(r.ratio);
                ratio_order.len() - 1
            }
        };
        let tasks = by_tasks.then_some(r.tasks);
        groups.entry((ri, tasks, r.mode)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((ri, tasks, mode), members)| {
            let ok: Vec<&SweepRow> = members.iter().copied().filter(|r| r.failure.is_none()).collect();
            let nm: Vec<f64> = ok.iter().map(|r| r.nmse).collect();
            let f1: Vec<f64> = ok.iter().map(|r| r.support_f1).collect();
            let (mean_nmse, std_nmse) = mean_std(&nm);
            let (mean_support_f1, std_support_f1) = mean_std(&f1);
            SummaryRow {
                ratio: ratio_order[ri],
                tasks,
                mode,
                count: ok.len(),
                failed: members.len() - ok.len(),
                mean_nmse,
                std_nmse,
                mean_support_f1,
                std_support_f1,
            }
        })
        .collect()
}

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let by_tasks = summary.iter().any(|s| s.tasks.is_some());
    let mut out = String::from(if by_tasks {
        "ratio,T,mode,count,failed,mean_nmse,std_nmse,mean_support_f1,std_support_f1\n"
    } else {
        "ratio,mode,count,failed,mean_nmse,std_nmse,mean_support_f1,std_support_f1\n"
    });
    for s in summary {
        let _ = write!(out, "{},", s.ratio);
        if let Some(t) = s.tasks {
            let _ = write!(out, "{t},");
        }
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.mode.label(),
            s.count,
            s.failed,
            s.mean_nmse,
            s.std_nmse,
            s.mean_support_f1,
            s.std_support_f1
        );
    }
    out
}
