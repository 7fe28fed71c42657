use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use driftscope::field::load_field;
use driftscope::trajectory::load_trajectories;
use serde_json::Value;

fn driftscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftscope")).args(args).env_remove("DRIFTSCOPE_PORT").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = driftscope(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small double-gyre dataset plus a cached embedding.
fn small_gyre(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("gyre.ptrj");
    let cache = dir.join("gyre.dgem");
    ok(&["generate", "--flow", "double-gyre", "--grid", "30x15", "--tau", "6.283185307179586", "--steps", "20", "-o", s(&data)]);
    ok(&["build", "-d", s(&data), "--landmarks", "120", "--cache", s(&cache)]);
    (data, cache)
}

#[test]
fn generate_writes_the_requested_lattice() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("dg.ptrj");
    ok(&["generate", "--flow", "double-gyre", "--grid", "120x60", "--tau", "6.283185307179586", "--steps", "100", "-o", s(&data)]);
    let ds = load_trajectories(BufReader::new(File::open(&data).unwrap())).unwrap();
    assert_eq!((ds.n(), ds.steps(), ds.dim()), (7200, 100, 2));
    assert!((ds.times()[99] - 2.0 * std::f64::consts::PI).abs() < 1e-9);
}

#[test]
fn unknown_flag_exits_with_usage_code() {
    let out = driftscope(&["build", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_exits_with_failure() {
    let out = driftscope(&["build", "-d", "/nonexistent/data.ptrj"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot open"));
}

#[test]
fn disconnected_dataset_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("split.csv");
    let mut text = String::from("id,t,x,y\n");
    for id in 0..20 {
        let x0 = if id < 10 { 0.0 } else { 100.0 } + 0.1 * (id % 10) as f64;
        for t in 0..3 {
            text.push_str(&format!("{id},{t},{},{}\n", x0 + 0.01 * t as f64, 0.05 * (id % 3) as f64));
        }
    }
    std::fs::write(&data, text).unwrap();
    let out = driftscope(&["build", "-d", s(&data), "--landmarks", "20"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiple components"));
}

#[test]
fn separation_sidecar_records_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cache) = small_gyre(dir.path());
    let out = dir.path().join("gs.dgsf");
    ok(&["separation", "-d", s(&data), "--cache", s(&cache), "--scale", "145", "-o", s(&out)]);
    let field = load_field(&out).unwrap();
    assert_eq!(field.len(), 450);
    assert_eq!(field.meta.scale, Some(145.0));
    assert!(field.values.iter().all(|v| v.is_finite()));

    let gamma = dir.path().join("g.dgsf");
    ok(&["separation", "-d", s(&data), "--direction", "backward", "-o", s(&gamma)]);
    let field = load_field(&gamma).unwrap();
    assert_eq!(field.meta.scale, None);
    assert_eq!(field.meta.k, Some(9));
}

#[test]
fn query_commands_print_json() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cache) = small_gyre(dir.path());
    let (d, c) = (s(&data), s(&cache));

    let field = stdout_json(&ok(&["field", "-d", d, "--cache", c, "--sources", "0", "--sources", "449", "--scale", "10"]));
    assert_eq!(field["sources"], serde_json::json!([0, 449]));
    assert_eq!(field["nearest"].as_array().unwrap().len(), 450);
    assert_eq!(field["nearest"][0], 0);
    assert_eq!(field["nearest"][449], 1);

    let nb = stdout_json(&ok(&["neighborhood", "-d", d, "--cache", c, "--source", "3", "--scale", "5", "--radius", "0.5", "--max", "10"]));
    let members = nb["members"].as_array().unwrap();
    assert_eq!(members[0], 3);
    assert!(members.len() <= 10);

    let clusters = stdout_json(&ok(&["clusters", "-d", d, "--cache", c, "--k", "2", "--scale", "10", "--kmeans-seed", "4"]));
    let labels = clusters["labels"].as_array().unwrap();
    assert_eq!(labels.len(), 450);
    assert!(labels.iter().all(|l| l.as_u64().unwrap() < 2));
    assert_eq!(clusters["seed"], 4);
    let again = stdout_json(&ok(&["clusters", "-d", d, "--cache", c, "--k", "2", "--scale", "10", "--kmeans-seed", "4"]));
    assert_eq!(clusters, again);
}

#[test]
fn landmark_file_round_trips_into_build() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = small_gyre(dir.path());
    let lm = dir.path().join("lm.json");
    ok(&["landmarks", "-d", s(&data), "--landmarks", "60", "--strategy", "fps", "-o", s(&lm)]);
    let by_file = stdout_json(&ok(&["build", "-d", s(&data), "--landmarks", s(&lm), "--strategy", "fps"]));
    let by_count = stdout_json(&ok(&["build", "-d", s(&data), "--landmarks", "60", "--strategy", "fps"]));
    assert_eq!(by_file["landmarks"], 60);
    assert_eq!(by_file["eigenvalues"], by_count["eigenvalues"]);
}

#[test]
fn eval_landmarks_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = small_gyre(dir.path());
    let csv = dir.path().join("eval.csv");
    ok(&[
        "eval-landmarks", "-d", s(&data), "--strategies", "random,tfps", "--counts", "60", "--subspaces", "5,10",
        "--trials", "2", "-o", s(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("strategy,n_l,subspace,trial,error,select_seconds"));
    assert_eq!(lines.count(), 2 * 2 * 2);
}
