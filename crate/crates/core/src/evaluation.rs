//! Prediction metrics, structure-recovery scores and exports of the learned
//! structure matrix (DOT graph, CSV heatmap).

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Mean over tasks of `MSE_t / Var_t`, with the population variance of the
/// reference outputs.
pub fn nmse<T: Real>(y_true: &DMatrix<T>, y_pred: &DMatrix<T>) -> Result<f64> {
    if y_true.shape() != y_pred.shape() {
        return Err(invalid(format!(
            "reference is {}x{} but prediction is {}x{}",
            y_true.nrows(),
            y_true.ncols(),
            y_pred.nrows(),
            y_pred.ncols()
        )));
    }
    let (m, tasks) = y_true.shape();
    if m == 0 || tasks == 0 {
        return Err(invalid("nmse of an empty matrix"));
    }
    let mut total = 0.0;
    for t in 0..tasks {
        let truth: Vec<f64> = y_true.column(t).iter().map(|v| v.as_f64()).collect();
        let mean = truth.iter().sum::<f64>() / m as f64;
        let var = truth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
        if !(var > 0.0) {
            return Err(Error::ZeroVariance { task: t });
        }
        let mse = truth
            .iter()
            .zip(y_pred.column(t).iter())
            .map(|(a, b)| (a - b.as_f64()).powi(2))
            .sum::<f64>()
            / m as f64;
        total += mse / var;
    }
    Ok(total / tasks as f64)
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows<T: Real>(scores: &DMatrix<T>) -> Vec<usize> {
    scores
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of rows whose argmax score equals the label.
pub fn accuracy<T: Real>(labels: &[usize], scores: &DMatrix<T>) -> Result<f64> {
    if labels.is_empty() {
        return Err(invalid("accuracy of an empty set"));
    }
    if labels.len() != scores.nrows() {
        return Err(invalid(format!(
            "{} labels for {} score rows",
            labels.len(),
            scores.nrows()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= scores.ncols()) {
        return Err(invalid(format!("label {bad} outside [0, {})", scores.ncols())));
    }
    let hits = argmax_rows(scores)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportRecovery {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub estimated_support: BTreeSet<(usize, usize)>,
    pub true_support: BTreeSet<(usize, usize)>,
}

/// `1e-3 · max|A|`.
pub fn default_support_threshold<T: Real>(a: &DMatrix<T>) -> f64 {
    1e-3 * a.iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()))
}

/// Precision and recall of `{|A_est| > threshold}` against `{A_true ≠ 0}`,
/// diagonal included.
pub fn support_recovery<T: Real>(a_est: &DMatrix<T>, a_true: &DMatrix<T>, threshold: f64) -> Result<SupportRecovery> {
    if a_est.shape() != a_true.shape() {
        return Err(invalid("structure matrices differ in shape"));
    }
    if !(threshold >= 0.0) {
        return Err(invalid("threshold must be nonnegative"));
    }
    let support = |a: &DMatrix<T>, keep: &dyn Fn(f64) -> bool| -> BTreeSet<(usize, usize)> {
        let mut s = BTreeSet::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if keep(a[(i, j)].as_f64()) {
                    s.insert((i, j));
                }
            }
        }
        s
    };
    let estimated_support = support(a_est, &|v| v.abs() > threshold);
    let true_support = support(a_true, &|v| v != 0.0);
    let hits = estimated_support.intersection(&true_support).count() as f64;
    if estimated_support.is_empty() && true_support.is_empty() {
        return Ok(SupportRecovery {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
            threshold,
            estimated_support,
            true_support,
        });
    }
    let precision = if estimated_support.is_empty() {
        0.0
    } else {
        hits / estimated_support.len() as f64
    };
    let recall = if true_support.is_empty() {
        0.0
    } else {
        hits / true_support.len() as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(SupportRecovery {
        precision,
        recall,
        f1,
        threshold,
        estimated_support,
        true_support,
    })
}

/// Decimal rendering with `digits` significant digits and no exponent.
fn significant(value: f64, digits: i32) -> String {
    if value == 0.0 || !value.is_finite() {
        return if value.is_finite() { "0".into() } else { value.to_string() };
    }
    let exponent = value.abs().log10().floor() as i32;
    let decimals = (digits - 1 - exponent).max(0) as usize;
    format!("{value:.decimals$}")
}

fn escape_label(label: &str) -> String {
    label.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Undirected DOT graph with one node per task and an edge `t -- s` (`t < s`)
/// whenever `|A[t, s]| > threshold`.
pub fn export_structure_graph<T: Real, S: AsRef<str>>(a: &DMatrix<T>, labels: &[S], threshold: f64) -> Result<String> {
    if !a.is_square() || labels.len() != a.nrows() {
        return Err(invalid(format!(
            "{} labels for a {}x{} structure matrix",
            labels.len(),
            a.nrows(),
            a.ncols()
        )));
    }
    let mut out = String::from("graph structure {\n");
    for (t, label) in labels.iter().enumerate() {
        let _ = writeln!(out, "  {t} [label=\"{}\"];", escape_label(label.as_ref()));
    }
    for t in 0..a.nrows() {
        for s in (t + 1)..a.ncols() {
            let w = a[(t, s)].as_f64().abs();
            if w > threshold {
                let _ = writeln!(out, "  {t} -- {s} [weight={}];", significant(w, 6));
            }
        }
    }
    out.push_str("}\n");
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeatmapMode {
    Raw,
    Abs,
}

fn ten_digits(v: f64) -> String {
    let rounded: f64 = format!("{v:.9e}").parse().unwrap_or(v);
    if rounded == 0.0 {
        "0".into()
    } else {
        rounded.to_string()
    }
}

/// Row-major comma-separated values of `A` with 10 significant digits,
/// rows separated by `\n` (no trailing newline).
pub fn heatmap_csv<T: Real>(a: &DMatrix<T>, mode: HeatmapMode) -> String {
    a.row_iter()
        .map(|row| {
            row.iter()
                .map(|v| {
                    let v = v.as_f64();
                    ten_digits(if mode == HeatmapMode::Abs { v.abs() } else { v })
                })
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
