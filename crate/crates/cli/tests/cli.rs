use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn designs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../designs")
}

fn spec(name: &str) -> String {
    designs().join(format!("{name}.json")).to_str().unwrap().to_string()
}

fn dbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbf"))
        .args(args)
        .env_remove("DBF_PLATFORM")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn every_design_validates() {
    for entry in fs::read_dir(designs()).unwrap() {
        let path = entry.unwrap().path();
        let out = dbf(&["validate", "--spec", path.to_str().unwrap(), "--json"]);
        let v = stdout_json(&out);
        assert_eq!(v["valid"], true, "{}", path.display());
        assert!(out.stderr.is_empty());
    }
}

#[test]
fn simulate_prints_outputs_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("data.json");
    fs::write(
        &input,
        r#"{"axpy0.alpha": 2.0, "axpy0.x": [1, 2, 3], "axpy0.y": [1, 1, 1], "dot0.y": [1, 1, 1]}"#,
    )
    .unwrap();
    let out = dbf(&[
        "simulate",
        "--spec",
        &spec("axpydot"),
        "--input",
        input.to_str().unwrap(),
    ]);
    let v = stdout_json(&out);
    // (2*1+1) + (2*2+1) + (2*3+1)
    assert_eq!(v["dot0.result"], 15.0);

    let out = dbf(&[
        "simulate",
        "--spec",
        &spec("axpydot"),
        "--input",
        input.to_str().unwrap(),
        "--json",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["outputs"]["dot0.result"], 15.0);
    assert!(v["trace"]["channels"].as_array().unwrap().len() == 6);
}

#[test]
fn simulate_generated_design_needs_only_a_size() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("n.json");
    fs::write(&input, r#"{"n": 4}"#).unwrap();
    let v = stdout_json(&dbf(&[
        "simulate",
        "--spec",
        &spec("axpy_nopl"),
        "--input",
        input.to_str().unwrap(),
    ]));
    // ramp: alpha=0, x=y=[0,1,2,3]
    assert_eq!(v["axpy0.z"], serde_json::json!([0.0, 1.0, 2.0, 3.0]));

    let out = dbf(&["simulate", "--spec", &spec("axpy_nopl")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"n\""));
}

#[test]
fn bad_input_data_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("data.json");
    fs::write(&input, r#"{"nope.x": [1]}"#).unwrap();
    let out = dbf(&["simulate", "--spec", &spec("axpy"), "--input", input.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
}

#[test]
fn estimate_json_and_table() {
    let v = stdout_json(&dbf(&["estimate", "--spec", &spec("axpy"), "--n", "1048576", "--json"]));
    let node = v["estimate"]["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .find(|n| n["name"] == "axpy0")
        .unwrap()
        .clone();
    assert!((node["compute_time"].as_f64().unwrap() - 65.536e-6).abs() < 1e-12);
    assert!((node["transfer_time"].as_f64().unwrap() - 1.048576e-3).abs() < 1e-12);

    let out = dbf(&["estimate", "--spec", &spec("axpydot"), "--variant", "dram_roundtrip"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("variant dram_roundtrip, n = 1048576"));
    assert!(text.contains("axpy0.z"));

    let out = dbf(&["estimate", "--spec", &spec("axpy"), "--variant", "bogus"]);
    assert_eq!(out.status.code(), Some(2), "clap usage errors exit 2");
}

#[test]
fn estimate_memory_report() {
    let v = stdout_json(&dbf(&["estimate", "--spec", &spec("gemv"), "--memory", "--json"]));
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 1);
    // 4 window ports x 2 buffers x 2048 bytes
    assert_eq!(rows[0]["bytes"], 16384);
    assert_eq!(rows[0]["headroom"], 16384);
}

#[test]
fn graph_outputs() {
    let out = dbf(&["graph", "--spec", &spec("axpydot"), "--dot"]);
    let dot = String::from_utf8(out.stdout).unwrap();
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("\"axpy0\" -> \"dot0\""));

    let v = stdout_json(&dbf(&["graph", "--spec", &spec("axpydot"), "--json"]));
    assert_eq!(v["nodes"].as_array().unwrap().len(), 7);
    let k2k: Vec<&Value> = v["channels"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| !c["class"].is_null())
        .collect();
    assert_eq!(k2k.len(), 1);
    assert_eq!(k2k[0]["class"], "neighbor");
}

#[test]
fn platform_overrides_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let platform = dir.path().join("platform.json");
    fs::write(&platform, r#"{"pl_to_aie_streams": 2}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dbf"))
        .args(["validate", "--spec", &spec("axpydot")])
        .env("DBF_PLATFORM", &platform)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("InterfaceBudgetExceeded"), "{err}");

    fs::write(&platform, r#"{"grid_rows": 0}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dbf"))
        .args(["validate", "--spec", &spec("axpy")])
        .env("DBF_PLATFORM", &platform)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = Command::new(env!("CARGO_BIN_EXE_dbf"))
        .args(["validate", "--spec", &spec("axpy")])
        .env("DBF_PLATFORM", dir.path().join("missing.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_force_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("build");
    let out_str = out_dir.to_str().unwrap();
    assert!(dbf(&["generate", "--spec", &spec("axpydot"), "--out", out_str])
        .status
        .success());
    let first = fs::read_to_string(out_dir.join("graph.def")).unwrap();
    let again = dbf(&["generate", "--spec", &spec("axpydot"), "--out", out_str]);
    assert_eq!(again.status.code(), Some(2));
    assert!(
        dbf(&["generate", "--spec", &spec("axpydot"), "--out", out_str, "--force"])
            .status
            .success()
    );
    assert_eq!(fs::read_to_string(out_dir.join("graph.def")).unwrap(), first);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("design.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["sources"].as_array().unwrap().len(), 8);
}
