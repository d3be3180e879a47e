use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fmnkit::dataset::Dataset;
use fmnkit::fixtures::random_mlp;
use fmnkit::report::load_results;

fn fmnkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmnkit")).args(args).output().unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// A small random 2-class model, a 12-sample dataset and a baseline config.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let model = random_mlp(&[3, 8, 2], 4);
    model.save(dir.path().join("model.json")).unwrap();
    let mut csv = String::from("label,f0,f1,f2\n");
    for i in 0..12 {
        let x = [0.1 + 0.07 * i as f64, 0.5, 0.9 - 0.06 * i as f64];
        let label = model.predict(&fmnkit::Tensor::vector(x.to_vec()).unwrap()).unwrap();
        csv.push_str(&format!("{label},{},{},{}\n", x[0], x[1], x[2]));
    }
    fs::write(dir.path().join("data.csv"), csv).unwrap();
    fs::write(
        dir.path().join("config.toml"),
        "loss = \"LL\"\nalpha0 = 1.0\niterations = 60\noptimizer.kind = \"sgd\"\nscheduler.kind = \"calr\"\nscheduler.t_max = 60\n",
    )
    .unwrap();
    dir
}

#[test]
fn attack_writes_one_row_per_sample() {
    let dir = workspace();
    let d = dir.path();
    let out = fmnkit(&[
        "attack", "--model", &path(d, "model.json"), "--data", &path(d, "data.csv"), "--config",
        &path(d, "config.toml"), "--out", &path(d, "run"), "--seed", "3", "--epsilon", "8/255",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let results = load_results(d.join("run/results.csv")).unwrap();
    assert_eq!(results.rows.len(), 12);
    assert!(results.header.iter().any(|l| l == "seed 3"));
    assert!(results.header.iter().any(|l| l.starts_with("fmnkit ")));
    let summary: toml::Table = fs::read_to_string(d.join("run/summary.toml")).unwrap().parse().unwrap();
    assert_eq!(summary["samples"].as_integer(), Some(12));
    assert_eq!(summary["config"]["optimizer"]["kind"].as_str(), Some("sgd"));

    let curve = fmnkit(&["curve", "--results", &path(d, "run/results.csv"), "--out", &path(d, "curve.csv")]);
    assert_eq!(curve.status.code(), Some(0));
    let text = fs::read_to_string(d.join("curve.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "epsilon,robust_accuracy");
    assert_eq!(rows.len(), 65);
}

#[test]
fn missing_model_is_an_input_error() {
    let dir = workspace();
    let d = dir.path();
    let out = fmnkit(&[
        "attack", "--model", &path(d, "absent.json"), "--data", &path(d, "data.csv"), "--config",
        &path(d, "config.toml"), "--out", &path(d, "run"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(v["error"], "io");
    assert!(v["message"].as_str().unwrap().contains("absent.json"));
}

#[test]
fn malformed_config_names_location() {
    let dir = workspace();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "loss = \"LL\"\nalpha0 = \"fast\"\n").unwrap();
    let out = fmnkit(&[
        "attack", "--model", &path(d, "model.json"), "--data", &path(d, "data.csv"), "--config",
        &path(d, "bad.toml"), "--out", &path(d, "run"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"], "parse");
    assert!(v["message"].as_str().unwrap().contains("bad.toml"));
}

#[test]
fn dataset_width_mismatch_is_rejected() {
    let dir = workspace();
    let d = dir.path();
    fs::write(d.join("narrow.csv"), "label,f0\n0,0.5\n").unwrap();
    let out = fmnkit(&[
        "attack", "--model", &path(d, "model.json"), "--data", &path(d, "narrow.csv"), "--config",
        &path(d, "config.toml"), "--out", &path(d, "run"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tune_writes_loadable_best_config() {
    let dir = workspace();
    let d = dir.path();
    let out = fmnkit(&[
        "tune", "--model", &path(d, "model.json"), "--data", &path(d, "data.csv"), "--out", &path(d, "tune"),
        "--budget-min", "3", "--budget-max", "27", "--eta", "3", "--evaluations", "40", "--seed", "1",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("best "), "{stdout}");
    let cfg = fmnkit::config::load_attack_config(d.join("tune/best_config.toml")).unwrap();
    assert_eq!(cfg.iterations, 27);
    assert!(stdout.contains(&cfg.triple()));
    let log = fs::read_to_string(d.join("tune/trials.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["record"], "header");
    assert_eq!(lines.len(), 41);
    for rec in &lines[1..] {
        assert_eq!(rec["seed"], 1);
        assert!(rec["config"]["optimizer.kind"].is_string());
        assert!([3, 9, 27].contains(&rec["budget"].as_u64().unwrap()));
    }
}

#[test]
fn gradcheck_and_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = fmnkit(&["gradcheck", "--trials", "30", "--seed", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], true);

    let out = fmnkit(&["gen-fixtures", "--kind", "linear", "--seed", "9", "--out", &path(d, "a")]);
    assert_eq!(out.status.code(), Some(0));
    let again = fmnkit(&["gen-fixtures", "--kind", "linear", "--seed", "9", "--out", &path(d, "b")]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(
        fs::read(d.join("a/linear_cases.json")).unwrap(),
        fs::read(d.join("b/linear_cases.json")).unwrap()
    );
    let doc: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("a/linear_cases.json")).unwrap()).unwrap();
    assert_eq!(doc["cases"].as_array().unwrap().len(), 50);
    assert_eq!(doc["seed"], 9);
    assert!(Dataset::load(d.join("a/linear_cases.json")).is_err());
}
