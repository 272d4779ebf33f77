//! Dataset CSV files, matrix CSV files and the JSON model format.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::ser::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::model::{Dataset, Hyperparams, MultiTaskModel, StructureMatrix};

pub const FORMAT_VERSION: &str = "skmtl-v1";

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: "<csv>".into(),
            source,
        },
        kind => parse_error(line, format!("{kind:?}")),
    }
}

fn parse_value(field: &str, line: u64, column: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_error(line, format!("column {}: {field:?} is not a number", column + 1)))?;
    if !v.is_finite() {
        return Err(parse_error(line, format!("column {}: non-finite value", column + 1)));
    }
    Ok(v)
}

/// Outputs of a dataset file: real targets, or class labels.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Real(DMatrix<f64>),
    Labels(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableData {
    pub x: DMatrix<f64>,
    pub targets: Targets,
}

/// Reads `x0..x{d-1}` followed by either `y0..y{T-1}` or a single `label`
/// column of class ids.
pub fn parse_dataset_csv(text: &str) -> Result<TableData> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let d = names.iter().take_while(|n| n.starts_with('x')).count();
    for (i, name) in names[..d].iter().enumerate() {
        if *name != format!("x{i}") {
            return Err(parse_error(1, format!("expected column x{i}, found {name:?}")));
        }
    }
    if d == 0 {
        return Err(parse_error(1, "no feature columns (x0, x1, ...)"));
    }
    let rest = &names[d..];
    let labelled = rest == ["label"];
    if !labelled {
        if rest.is_empty() {
            return Err(parse_error(1, "no output columns (y0, y1, ...) or label column"));
        }
        for (i, name) in rest.iter().enumerate() {
            if *name != format!("y{i}") {
                return Err(parse_error(1, format!("expected column y{i}, found {name:?}")));
            }
        }
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != names.len() {
            return Err(parse_error(line, format!("expected {} fields, found {}", names.len(), record.len())));
        }
        for (j, field) in record.iter().enumerate() {
            if j < d {
                xs.push(parse_value(field, line, j)?);
            } else if labelled {
                let label: usize = field
                    .trim()
                    .parse()
                    .map_err(|_| parse_error(line, format!("label {field:?} is not a class id")))?;
                labels.push(label);
            } else {
                ys.push(parse_value(field, line, j)?);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_error(2, "no data rows"));
    }
    let x = DMatrix::from_row_slice(rows, d, &xs);
    let targets = if labelled {
        Targets::Labels(labels)
    } else {
        Targets::Real(DMatrix::from_row_slice(rows, rest.len(), &ys))
    };
    Ok(TableData { x, targets })
}

pub fn read_dataset_csv(path: &Path) -> Result<TableData> {
    parse_dataset_csv(&read_text(path)?).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Header plus one row per sample; values in shortest round-trip form.
pub fn dataset_csv(data: &Dataset<f64>) -> String {
    let mut header: Vec<String> = (0..data.n_features()).map(|j| format!("x{j}")).collect();
    header.extend((0..data.n_tasks()).map(|t| format!("y{t}")));
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..data.n_samples() {
        let row: Vec<String> = data
            .x()
            .row(i)
            .iter()
            .chain(data.y().row(i).iter())
            .map(|v| v.to_string())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Headerless matrix, one row per line.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(parse_error(line, "rows have different lengths"));
        }
        for (j, field) in record.iter().enumerate() {
            values.push(parse_value(field, line, j)?);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_error(1, "empty matrix file"))?;
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix_csv(&read_text(path)?)
}

/// One matrix row, written on a single line with 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactRow(pub Vec<f64>);

impl Serialize for ExactRow {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(S::Error::custom("non-finite number in model"));
        }
        let items: Vec<String> = self.0.iter().map(|v| format!("{v:.16e}")).collect();
        RawValue::from_string(format!("[{}]", items.join(", ")))
            .map_err(S::Error::custom)?
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ExactRow {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Vec::<f64>::deserialize(d).map(ExactRow)
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<ExactRow> {
    (0..m.nrows()).map(|i| ExactRow(m.row(i).iter().copied().collect())).collect()
}

fn from_rows(rows: &[ExactRow], what: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, |r| r.0.len());
    if rows.iter().any(|r| r.0.len() != cols) {
        return Err(crate::error::invalid(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i].0[j]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format_version: String,
    mode: String,
    classification: bool,
    kernel: KernelSpec,
    hyperparams: Hyperparams,
    n: usize,
    d: usize,
    #[serde(rename = "T")]
    tasks: usize,
    train_x: Vec<ExactRow>,
    #[serde(rename = "C")]
    coefficients: Vec<ExactRow>,
    #[serde(rename = "A")]
    structure: Vec<ExactRow>,
}

/// A model with the settings it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: MultiTaskModel<f64>,
    pub hyperparams: Hyperparams,
    pub mode: String,
    pub classification: bool,
}

pub fn model_json(saved: &SavedModel) -> Result<String> {
    let m = &saved.model;
    let file = ModelFile {
        format_version: FORMAT_VERSION.into(),
        mode: saved.mode.clone(),
        classification: saved.classification,
        kernel: m.kernel,
        hyperparams: saved.hyperparams,
        n: m.train_x.nrows(),
        d: m.train_x.ncols(),
        tasks: m.n_tasks(),
        train_x: to_rows(&m.train_x),
        coefficients: to_rows(&m.coefficients),
        structure: to_rows(m.structure.matrix()),
    };
    serde_json::to_string_pretty(&file).map_err(|e| crate::error::invalid(e.to_string()))
}

pub fn parse_model_json(text: &str) -> Result<SavedModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| parse_error(e.line() as u64, e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(crate::error::invalid(format!("unsupported model format {:?}", file.format_version)));
    }
    let train_x = from_rows(&file.train_x, "train_x")?;
    let c = from_rows(&file.coefficients, "C")?;
    let a = from_rows(&file.structure, "A")?;
    if train_x.shape() != (file.n, file.d) || c.shape() != (file.n, file.tasks) || a.shape() != (file.tasks, file.tasks) {
        return Err(crate::error::invalid(format!(
            "model.json shapes disagree with n={}, d={}, T={}",
            file.n, file.d, file.tasks
        )));
    }
    file.kernel.validate()?;
    let model = MultiTaskModel::new(train_x, file.kernel, c, StructureMatrix::new(a)?)?;
    Ok(SavedModel {
        model,
        hyperparams: file.hyperparams,
        mode: file.mode,
        classification: file.classification,
    })
}

/// Deserialization helper for JSON config files that names the file.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line() as u64,
        message: format!("{}: {e}", path.display()),
    })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| crate::error::invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}
