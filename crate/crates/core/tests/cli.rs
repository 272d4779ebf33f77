//! End-to-end runs of the `skmtl` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use skmtl::cli::io::{parse_model_json, read_dataset_csv, read_matrix_csv, Targets};
use skmtl::evaluation::nmse;
use skmtl::trainer::{fit, FitMode};
use skmtl::{Dataset, Hyperparams, KernelSpec};
use tempfile::TempDir;

fn skmtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skmtl"))
        .args(args)
        .env("SKMTL_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = skmtl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_json(path: &Path, value: &Value) -> PathBuf {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path.to_path_buf()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small instance in `dir/data`.
fn synth(dir: &Path, extra: Value) -> PathBuf {
    let mut cfg = json!({"d": 8, "T": 4, "n_train": 40, "n_test": 30, "support_ratio": 0.5});
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let config = write_json(&dir.join("synth.json"), &cfg);
    let out = dir.join("data");
    ok(&["synth", "--config", s(&config), "--seed", "3", "--out", s(&out)]);
    out
}

fn fit_config(dir: &Path, data: &Path, hyper: Value) -> PathBuf {
    write_json(
        &dir.join("fit.json"),
        &json!({"train": data.join("train.csv"), "kernel": {"kind": "linear"}, "hyperparams": hyper}),
    )
}

fn real_dataset(path: &Path) -> Dataset {
    let table = read_dataset_csv(path).unwrap();
    match table.targets {
        Targets::Real(y) => Dataset::new(table.x, y).unwrap(),
        Targets::Labels(_) => panic!("expected real targets"),
    }
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let config = write_json(&dir.path().join("c.json"), &json!({"T": 10, "support_ratio": 0.5}));
    for name in ["a", "b"] {
        ok(&["synth", "--config", s(&config), "--seed", "11", "--out", s(&dir.path().join(name))]);
    }
    for file in ["train.csv", "test.csv", "A_true.csv", "A_corrupted.csv", "manifest.json"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    let a_true = read_matrix_csv(&dir.path().join("a/A_true.csv")).unwrap();
    assert_eq!(a_true.shape(), (10, 10));
    assert_eq!(a_true.iter().filter(|v| **v != 0.0).count(), 50);
    let manifest = read_json(&dir.path().join("a/manifest.json"));
    assert_eq!(manifest["support_size"], 50);
    assert_eq!(manifest["seed"], 11);
}

#[test]
fn single_task_mode_writes_identity_structure() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), json!({}));
    let config = fit_config(dir.path(), &data, json!({"lambda": 0.1}));
    let out = dir.path().join("stl");
    ok(&["fit", "--config", s(&config), "--mode", "stl", "--out", s(&out)]);
    let saved = parse_model_json(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    let a = saved.model.structure.matrix();
    assert_eq!(a, &nalgebra::DMatrix::<f64>::identity(4, 4));
    assert_eq!(read_json(&out.join("report.json"))["mode"], "stl");
}

#[test]
fn refit_repeats_traces_and_model_reloads_exactly() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), json!({}));
    let hyper = json!({"lambda": 0.05, "mu": 0.7, "epsilon": 0.1});
    let config = fit_config(dir.path(), &data, hyper.clone());
    let (a, b) = (dir.path().join("fit_a"), dir.path().join("fit_b"));
    ok(&["fit", "--config", s(&config), "--out", s(&a)]);
    ok(&["fit", "--config", s(&config), "--out", s(&b), "--jobs", "2"]);
    let (ra, rb) = (read_json(&a.join("report.json")), read_json(&b.join("report.json")));
    assert_eq!(ra["objective_trace"], rb["objective_trace"]);
    assert_eq!(ra["half_step_trace"], rb["half_step_trace"]);
    assert_eq!(fs::read(a.join("model.json")).unwrap(), fs::read(b.join("model.json")).unwrap());

    // Predictions of the reloaded model match an in-process fit.
    let saved = parse_model_json(&fs::read_to_string(a.join("model.json")).unwrap()).unwrap();
    let hp: Hyperparams = serde_json::from_value(hyper).unwrap();
    let train = real_dataset(&data.join("train.csv"));
    let (model, _) = fit(&train, &KernelSpec::linear(), &hp, &FitMode::Skmtl).unwrap();
    let test = real_dataset(&data.join("test.csv"));
    let direct = model.predict(test.x()).unwrap();
    let loaded = saved.model.predict(test.x()).unwrap();
    let diff = (&direct - &loaded).amax();
    assert!(diff <= 1e-12 * (1.0 + direct.amax()), "prediction drift {diff}");
}

#[test]
fn eval_reports_metrics_and_graph() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), json!({}));
    let config = fit_config(dir.path(), &data, json!({"lambda": 0.1}));
    let model_dir = dir.path().join("model");
    ok(&["fit", "--config", s(&config), "--out", s(&model_dir)]);

    let plain = write_json(
        &dir.path().join("eval.json"),
        &json!({"model": model_dir.join("model.json"), "test": data.join("test.csv")}),
    );
    let out = dir.path().join("eval");
    ok(&["eval", "--config", s(&plain), "--out", s(&out)]);
    let metrics = read_json(&out.join("metrics.json"));
    assert!(metrics["nmse"].as_f64().unwrap().is_finite());
    assert!(metrics.get("support_recovery").is_none());
    assert!(metrics.get("accuracy").is_none());

    let dot = fs::read_to_string(out.join("structure.dot")).unwrap();
    let lines: Vec<&str> = dot.lines().collect();
    assert_eq!(lines[0], "graph structure {");
    assert_eq!(*lines.last().unwrap(), "}");
    let mut nodes = 0;
    for line in &lines[1..lines.len() - 1] {
        let line = line.trim().strip_suffix(';').expect("statement ends with ;");
        let (head, attrs) = line.split_once(" [").expect("attribute list");
        assert!(attrs.ends_with(']'));
        match head.split_once(" -- ") {
            Some((u, v)) => {
                let (u, v): (usize, usize) = (u.parse().unwrap(), v.parse().unwrap());
                assert!(u < v && v < 4);
                assert!(attrs.starts_with("weight="));
            }
            None => {
                assert_eq!(head.parse::<usize>().unwrap(), nodes);
                nodes += 1;
            }
        }
    }
    assert_eq!(nodes, 4);
    let heat = fs::read_to_string(out.join("A_abs.csv")).unwrap();
    assert_eq!(heat.lines().count(), 4);

    let with_truth = write_json(
        &dir.path().join("eval_truth.json"),
        &json!({"model": model_dir.join("model.json"), "test": data.join("test.csv"), "a_true": data.join("A_true.csv")}),
    );
    let out = dir.path().join("eval_truth");
    ok(&["eval", "--config", s(&with_truth), "--out", s(&out)]);
    let sr = &read_json(&out.join("metrics.json"))["support_recovery"];
    let f1 = sr["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    assert_eq!(sr["true_support"].as_array().unwrap().len(), 8);
}

#[test]
fn noiseless_low_dimensional_fit_predicts_well() {
    let dir = TempDir::new().unwrap();
    let data = synth(
        dir.path(),
        json!({"d": 4, "n_train": 60, "noise_var": 0.0, "corrupt": false}),
    );
    let config = fit_config(dir.path(), &data, json!({"lambda": 1e-6}));
    let model_dir = dir.path().join("model");
    ok(&["fit", "--config", s(&config), "--out", s(&model_dir)]);
    let eval = write_json(
        &dir.path().join("eval.json"),
        &json!({"model": model_dir.join("model.json"), "test": data.join("test.csv")}),
    );
    let out = dir.path().join("eval");
    ok(&["eval", "--config", s(&eval), "--out", s(&out)]);
    let score = read_json(&out.join("metrics.json"))["nmse"].as_f64().unwrap();
    assert!(score < 0.05, "nmse {score}");

    // Cross-check against a direct computation on the same model.
    let saved = parse_model_json(&fs::read_to_string(model_dir.join("model.json")).unwrap()).unwrap();
    let test = real_dataset(&data.join("test.csv"));
    let direct = nmse(test.y(), &saved.model.predict(test.x()).unwrap()).unwrap();
    assert!((direct - score).abs() <= 1e-12);
}

fn sweep_config(dir: &Path, replicates: usize) -> PathBuf {
    write_json(
        &dir.join("sweep.json"),
        &json!({
            "base": {"d": 8, "n_train": 30, "n_test": 20},
            "ratios": [0.5],
            "tasks": [4],
            "replicates": replicates,
            "grid": {"lambdas": [0.01, 0.1], "mus": [0.5], "epsilons": [0.1]},
            "folds": 3
        }),
    )
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn minimal_sweep_has_one_row_per_mode() {
    let dir = TempDir::new().unwrap();
    let config = sweep_config(dir.path(), 1);
    let out = dir.path().join("sweep");
    ok(&["sweep", "--config", s(&config), "--seed", "5", "--out", s(&out)]);
    let text = fs::read_to_string(out.join("sweep_results.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "ratio,T,replicate,mode,nmse,support_f1,wall_time");
    let (_, rows) = read_rows(&out.join("sweep_results.csv"));
    assert_eq!(rows.len(), 3);
    let mut modes: Vec<&str> = rows.iter().map(|r| r[3].as_str()).collect();
    modes.sort();
    assert_eq!(modes, ["GT", "SKMTL", "STL"]);
    for file in ["summary.csv", "summary_by_T.csv", "failures.csv", "selection.csv", "manifest.json"] {
        assert!(out.join(file).is_file(), "{file} missing");
    }
}

#[test]
fn summary_matches_hand_averages() {
    let dir = TempDir::new().unwrap();
    let config = sweep_config(dir.path(), 3);
    let out = dir.path().join("sweep");
    ok(&["sweep", "--config", s(&config), "--out", s(&out)]);
    let (_, rows) = read_rows(&out.join("sweep_results.csv"));
    assert_eq!(rows.len(), 9);
    let (header, summary) = read_rows(&out.join("summary.csv"));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for line in &summary {
        let mode = &line[col("mode")];
        let nmse: Vec<f64> = rows.iter().filter(|r| &r[3] == mode).map(|r| r[4].parse().unwrap()).collect();
        assert_eq!(nmse.len(), 3);
        let mean = nmse.iter().sum::<f64>() / 3.0;
        let var = nmse.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0;
        let got_mean: f64 = line[col("mean_nmse")].parse().unwrap();
        let got_std: f64 = line[col("std_nmse")].parse().unwrap();
        assert!((got_mean - mean).abs() <= 1e-12, "{mode}: {got_mean} vs {mean}");
        assert!((got_std - var.sqrt()).abs() <= 1e-12, "{mode}: {got_std} vs {}", var.sqrt());
        assert_eq!(line[col("count")], "3");
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.json");
    let cases: Vec<Vec<&str>> = vec![
        vec![],
        vec!["frobnicate"],
        vec!["fit"],
        vec!["fit", "--config", s(&missing)],
        vec!["synth", "--mode", "stl"],
        vec!["synth", "--jobs", "0"],
        vec!["fit", "--mode", "sideways"],
        vec!["synth", "--seed", "minus-one"],
    ];
    for args in cases {
        assert_eq!(skmtl(&args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn data_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x0,y0\n1.0,oops\n").unwrap();
    let config = write_json(&dir.path().join("fit.json"), &json!({"train": bad}));
    let out = skmtl(&["fit", "--config", s(&config), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    // A model trained on 4 tasks evaluated on 3 outputs.
    let data = synth(dir.path(), json!({}));
    let fit = fit_config(dir.path(), &data, json!({"lambda": 0.1}));
    let model_dir = dir.path().join("model");
    ok(&["fit", "--config", s(&fit), "--mode", "stl", "--out", s(&model_dir)]);
    let other = dir.path().join("other");
    fs::create_dir(&other).unwrap();
    let cfg = write_json(&dir.path().join("s3.json"), &json!({"d": 8, "T": 3, "support_ratio": 0.5}));
    ok(&["synth", "--config", s(&cfg), "--out", s(&other)]);
    let eval = write_json(
        &dir.path().join("eval.json"),
        &json!({"model": model_dir.join("model.json"), "test": other.join("test.csv")}),
    );
    let out = skmtl(&["eval", "--config", s(&eval), "--out", s(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("T=4") && msg.contains("100x8") && msg.contains("3 outputs"), "{msg}");
}
