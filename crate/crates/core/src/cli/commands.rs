use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::io::{self, SavedModel, Targets, FORMAT_VERSION};
use super::{usage, CliError, Context, ModeArg};
use crate::error::{invalid, Error};
use crate::evaluation::{
    accuracy, argmax_rows, default_support_threshold, export_structure_graph, heatmap_csv, nmse, support_recovery,
    HeatmapMode,
};
use crate::kernels::KernelSpec;
use crate::model::{Dataset, Hyperparams, StructureMatrix};
use crate::sweep::{
    failures_csv, results_csv, run_sweep, selection_csv, summarize, summary_csv, GridSpec, SweepConfig,
};
use crate::synth::{generate, SynthConfig};
use crate::trainer::{self, cv_grid_search, one_vs_all_targets, FitMode, Scoring};

type CmdResult = Result<(), CliError>;

fn load_config<T: for<'de> Deserialize<'de> + Default>(ctx: &Context) -> Result<T, CliError> {
    match &ctx.config {
        None => Ok(T::default()),
        Some(path) => {
            let text = io::read_text(path).map_err(|e| usage(e.to_string()))?;
            io::parse_json(&text, path).map_err(|e| usage(e.to_string()))
        }
    }
}

fn require_config<T: for<'de> Deserialize<'de> + Default>(ctx: &Context, command: &str) -> Result<T, CliError> {
    if ctx.config.is_none() {
        return Err(usage(format!("{command} needs --config")));
    }
    load_config(ctx)
}

fn resolve(ctx: &Context, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        ctx.config_dir().join(path)
    }
}

fn existing(ctx: &Context, path: &Path, what: &str) -> Result<PathBuf, CliError> {
    let p = resolve(ctx, path);
    if !p.is_file() {
        return Err(usage(format!("{what} file {} not found", p.display())));
    }
    Ok(p)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    io::write_text(&dir.join(name), text)?;
    Ok(())
}

pub fn synth(ctx: &Context) -> CmdResult {
    let mut cfg: SynthConfig = load_config(ctx)?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let inst = generate::<f64>(&cfg)?;
    io::create_dir(&ctx.out)?;
    write(&ctx.out, "train.csv", &io::dataset_csv(&inst.train))?;
    write(&ctx.out, "test.csv", &io::dataset_csv(&inst.test))?;
    write(&ctx.out, "A_true.csv", &io::matrix_csv(&inst.a_true))?;
    write(&ctx.out, "A_corrupted.csv", &io::matrix_csv(&inst.a_corrupted))?;
    let cols = cfg.d + cfg.tasks;
    let manifest = json!({
        "format_version": FORMAT_VERSION,
        "command": "synth",
        "seed": cfg.seed,
        "config": cfg,
        "files": {
            "train.csv": {"rows": cfg.n_train, "columns": cols, "header": true},
            "test.csv": {"rows": cfg.n_test, "columns": cols, "header": true},
            "A_true.csv": {"rows": cfg.tasks, "columns": cfg.tasks, "header": false},
            "A_corrupted.csv": {"rows": cfg.tasks, "columns": cfg.tasks, "header": false},
        },
        "support_size": cfg.support_size(),
    });
    write(&ctx.out, "manifest.json", &io::to_json(&manifest)?)?;
    info!("wrote synthetic instance to {}", ctx.out.display());
    Ok(())
}

/// Settings of `skmtl fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Training CSV, relative to the config file.
    pub train: PathBuf,
    pub kernel: KernelSpec,
    /// Used as is when no grid is given.
    pub hyperparams: Hyperparams,
    /// Cross-validated over when present.
    pub grid: Option<GridSpec>,
    pub folds: usize,
    /// `skmtl`, `stl` or `fixed:PATH`.
    pub mode: String,
    pub classification: bool,
    /// Number of classes; defaults to the largest label plus one.
    pub classes: Option<usize>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            train: PathBuf::new(),
            kernel: KernelSpec::default(),
            hyperparams: Hyperparams::default(),
            grid: None,
            folds: 5,
            mode: "skmtl".into(),
            classification: false,
            classes: None,
            seed: 0,
        }
    }
}

fn targets(table: io::TableData, classification: bool, classes: Option<usize>) -> Result<(Dataset<f64>, Option<Vec<usize>>), CliError> {
    match (table.targets, classification) {
        (Targets::Real(y), false) => Ok((Dataset::new(table.x, y)?, None)),
        (Targets::Labels(labels), true) => {
            let t = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
            if t < 2 {
                return Err(invalid("classification needs at least two classes").into());
            }
            let y = one_vs_all_targets(&labels, t)?;
            Ok((Dataset::new(table.x, y)?, Some(labels)))
        }
        (Targets::Real(_), true) => Err(invalid("--classification needs a label column").into()),
        (Targets::Labels(_), false) => Err(invalid("label column found; pass --classification").into()),
    }
}

pub fn fit(ctx: &Context) -> CmdResult {
    let cfg: FitConfig = require_config(ctx, "fit")?;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    let classification = ctx.classification || cfg.classification;
    let mode_arg = match &ctx.mode {
        Some(m) => m.clone(),
        None => ModeArg::parse(&cfg.mode, &ctx.config_dir())?,
    };
    cfg.kernel.validate().map_err(|e| usage(e.to_string()))?;
    cfg.hyperparams.validate().map_err(|e| usage(e.to_string()))?;
    let grid = cfg
        .grid
        .as_ref()
        .map(|g| g.cells().map_err(|e| usage(e.to_string())))
        .transpose()?;

    let train_path = existing(ctx, &cfg.train, "training")?;
    let (data, _) = targets(io::read_dataset_csv(&train_path)?, classification, cfg.classes)?;
    let mode = match &mode_arg {
        ModeArg::Skmtl => FitMode::Skmtl,
        ModeArg::Stl => FitMode::SingleTask,
        ModeArg::Fixed(p) => {
            if !p.is_file() {
                return Err(usage(format!("fixed structure file {} not found", p.display())));
            }
            FitMode::FixedStructure(StructureMatrix::new(io::read_matrix_csv(p)?)?)
        }
    };

    let start = Instant::now();
    let scoring = if classification { Scoring::Accuracy } else { Scoring::Nmse };
    let cv = match &grid {
        Some(cells) => Some(cv_grid_search(&data, &cfg.kernel, cells, cfg.folds, &mode, seed, scoring)?),
        None => None,
    };
    let hp = cv.as_ref().map_or(cfg.hyperparams, |c| c.best);
    let (model, report) = trainer::fit(&data, &cfg.kernel, &hp, &mode)?;
    if report.inner_not_converged > 0 {
        warn!("{} structure solves hit the inner iteration cap", report.inner_not_converged);
    }

    io::create_dir(&ctx.out)?;
    let saved = SavedModel {
        model,
        hyperparams: hp,
        mode: mode.name().into(),
        classification,
    };
    write(&ctx.out, "model.json", &(io::model_json(&saved)? + "\n"))?;
    let report_json = json!({
        "format_version": FORMAT_VERSION,
        "mode": mode.name(),
        "classification": classification,
        "seed": seed,
        "status": report.status,
        "hyperparams": hp,
        "objective_trace": report.objective_trace,
        "half_step_trace": report.half_step_trace,
        "inner_iters": report.inner_iters,
        "inner_not_converged": report.inner_not_converged,
        "cv": cv,
        "wall_time": report.wall_time,
        "total_wall_time": start.elapsed().as_secs_f64(),
    });
    write(&ctx.out, "report.json", &io::to_json(&report_json)?)?;
    info!("fit {:?}, objective {:?}", report.status, report.objective_trace.last());
    Ok(())
}

/// Settings of `skmtl eval`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub model: PathBuf,
    pub test: PathBuf,
    /// Reference structure for support recovery.
    pub a_true: Option<PathBuf>,
    /// Support threshold; defaults to 1e-3 of the largest entry of `A`.
    pub threshold: Option<f64>,
    /// Task names for the structure graph.
    pub labels: Option<Vec<String>>,
    pub classification: bool,
}

pub fn eval(ctx: &Context) -> CmdResult {
    let cfg: EvalConfig = require_config(ctx, "eval")?;
    let model_path = existing(ctx, &cfg.model, "model")?;
    let test_path = existing(ctx, &cfg.test, "test")?;
    let a_true_path = cfg.a_true.as_ref().map(|p| existing(ctx, p, "A_true")).transpose()?;
    if let Some(t) = cfg.threshold {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(usage(format!("threshold must be nonnegative, got {t}")));
        }
    }

    let saved = io::parse_model_json(&io::read_text(&model_path)?)?;
    let classification = ctx.classification || cfg.classification || saved.classification;
    let model = &saved.model;
    let tasks = model.n_tasks();
    let table = io::read_dataset_csv(&test_path)?;
    let test_outputs = match &table.targets {
        Targets::Real(y) => y.ncols(),
        Targets::Labels(_) => tasks,
    };
    if table.x.ncols() != model.train_x.ncols() || test_outputs != tasks {
        return Err(Error::InvalidInput(format!(
            "model has d={} features and T={tasks} tasks but test data is {}x{} with {} outputs",
            model.train_x.ncols(),
            table.x.nrows(),
            table.x.ncols(),
            test_outputs
        ))
        .into());
    }
    let (data, labels) = targets(table, classification, Some(tasks))?;
    let pred = model.predict(data.x())?;

    let mut metrics = serde_json::Map::new();
    metrics.insert("format_version".into(), json!(FORMAT_VERSION));
    metrics.insert("n_test".into(), json!(data.n_samples()));
    let score = match nmse(data.y(), &pred) {
        Ok(v) => json!(v),
        Err(Error::ZeroVariance { task }) if classification => {
            warn!("nmse undefined: class {task} constant in the test set");
            serde_json::Value::Null
        }
        Err(e) => return Err(e.into()),
    };
    metrics.insert("nmse".into(), score);
    if classification {
        let labels = labels.unwrap_or_else(|| argmax_rows(data.y()));
        metrics.insert("accuracy".into(), json!(accuracy(&labels, &pred)?));
    }

    let a = model.structure.matrix();
    let threshold = cfg.threshold.unwrap_or_else(|| default_support_threshold(a));
    if let Some(p) = a_true_path {
        let a_true = io::read_matrix_csv(&p)?;
        if a_true.shape() != a.shape() {
            return Err(Error::InvalidInput(format!(
                "A_true is {}x{} but the model structure is {tasks}x{tasks}",
                a_true.nrows(),
                a_true.ncols()
            ))
            .into());
        }
        let sr = support_recovery(a, &a_true, threshold)?;
        metrics.insert(
            "support_recovery".into(),
            json!({
                "precision": sr.precision,
                "recall": sr.recall,
                "f1": sr.f1,
                "threshold": sr.threshold,
                "estimated_support": sr.estimated_support,
                "true_support": sr.true_support,
            }),
        );
    }

    let names: Vec<String> = match cfg.labels {
        Some(l) if l.len() == tasks => l,
        Some(l) => return Err(usage(format!("{} labels given for {tasks} tasks", l.len()))),
        None => (0..tasks).map(|t| format!("task{t}")).collect(),
    };
    io::create_dir(&ctx.out)?;
    write(&ctx.out, "metrics.json", &io::to_json(&metrics)?)?;
    write(&ctx.out, "structure.dot", &export_structure_graph(a, &names, threshold)?)?;
    write(&ctx.out, "A_abs.csv", &(heatmap_csv(a, HeatmapMode::Abs) + "\n"))?;
    Ok(())
}

pub fn sweep(ctx: &Context) -> CmdResult {
    let mut cfg: SweepConfig = load_config(ctx)?;
    if let Some(seed) = ctx.seed {
        cfg.base.seed = seed;
    }
    cfg.grid.cells().map_err(|e| usage(e.to_string()))?;
    if cfg.replicates == 0 || cfg.ratios.is_empty() || cfg.tasks.is_empty() {
        return Err(usage("sweep needs ratios, task counts and at least one replicate"));
    }
    if let Some(bad) = cfg.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(usage(format!("support ratio must lie in (0, 1], got {bad}")));
    }
    let rows = run_sweep::<f64>(&cfg)?;
    let failed = rows.iter().filter(|r| r.failure.is_some()).count();
    if failed > 0 {
        warn!("{failed} of {} sweep cells failed; see failures.csv", rows.len());
    }
    io::create_dir(&ctx.out)?;
    write(&ctx.out, "sweep_results.csv", &results_csv(&rows, true))?;
    write(&ctx.out, "summary.csv", &summary_csv(&summarize(&rows, false)))?;
    write(&ctx.out, "summary_by_T.csv", &summary_csv(&summarize(&rows, true)))?;
    write(&ctx.out, "failures.csv", &failures_csv(&rows))?;
    write(&ctx.out, "selection.csv", &selection_csv(&rows))?;
    let manifest = json!({
        "format_version": FORMAT_VERSION,
        "command": "sweep",
        "seed": cfg.base.seed,
        "config": cfg,
        "cells": rows.len(),
        "failed": failed,
    });
    write(&ctx.out, "manifest.json", &io::to_json(&manifest)?)?;
    Ok(())
}
