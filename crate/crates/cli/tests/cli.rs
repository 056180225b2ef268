use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn plrecon(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plrecon")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = plrecon(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Value of `key=` in the command output.
fn field(stdout: &str, key: &str) -> String {
    let tag = format!("{key}=");
    stdout
        .split_whitespace()
        .find_map(|t| t.strip_prefix(&tag))
        .unwrap_or_else(|| panic!("no {key} in {stdout}"))
        .to_string()
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn demo() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen", "--arch", "2,3,1", "--seed", "42", "--out", "net.json"]);
    ok(dir.path(), &["probe", "--net", "net.json", "--samples", "20", "--seed", "1", "--out", "probes.json"]);
    dir
}

#[test]
fn gen_reports_parameter_count_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["gen", "--arch", "2,3,1", "--seed", "42", "--out", "a.json"]);
    assert!(out.contains("D=13"));
    ok(d, &["gen", "--arch", "2,3,1", "--seed", "42", "--out", "b.json"]);
    assert_eq!(std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("b.json")).unwrap());
}

#[test]
fn bad_architecture_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = plrecon(dir.path(), &["gen", "--arch", "2,3", "--out", "net.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("net.json").exists());
}

#[test]
fn probe_counts_match_the_file() {
    let dir = demo();
    let d = dir.path();
    let out = ok(d, &["probe", "--net", "net.json", "--samples", "20", "--seed", "1", "--out", "p.json"]);
    let probes = json(d, "p.json");
    assert_eq!(probes["points"].as_array().unwrap().len(), 20);
    assert_eq!(field(&out, "accepted"), "20");
    assert_eq!(field(&out, "rejected"), probes["rejected"].to_string());
    assert_eq!(field(&out, "queries"), probes["queries"].to_string());
}

#[test]
fn missing_inputs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = plrecon(dir.path(), &["probe", "--net", "absent.json", "--out", "p.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
}

#[test]
fn fit_agrees_with_normal_equations() {
    let dir = demo();
    let d = dir.path();
    let out = ok(d, &["fit", "--net", "net.json", "--probes", "probes.json", "--out", "m.json", "--check-normal"]);
    let diff: f64 = field(&out, "normal_max_abs_diff").parse().unwrap();
    assert!(diff <= 1e-6, "{diff}");
    let record = json(d, "m.json.report.json");
    assert_eq!(record["report"]["weights"].as_array().unwrap().len(), 20);
    assert_eq!(json(d, "m.json")["w"].as_array().unwrap().len(), 20);
}

#[test]
fn heavy_l1_penalty_zeroes_every_weight() {
    let dir = demo();
    let out = ok(dir.path(), &["fit", "--net", "net.json", "--probes", "probes.json", "--reg", "l1", "--lambda", "10", "--out", "m.json"]);
    assert_eq!(field(&out, "nonzero_weights"), "0");
}

#[test]
fn exact_model_has_zero_distance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // one always-active neuron: f(x) = 2x₁ - x₂ + 3.5
    let net = r#"{"arch":[2,1,1],"final_activation":false,"layers":[
        {"W":[[2.0,-1.0]],"b":[5.0]},{"W":[[1.0]],"b":[-1.5]}]}"#;
    std::fs::write(d.join("net.json"), net).unwrap();
    let model = r#"{"patches":[{"v":[0.0,0.0],"L":[2.0,-1.0],"b":3.5,"c":1.0,"r":1.0}],"w":[1.0],"T":1.0}"#;
    std::fs::write(d.join("model.json"), model).unwrap();
    let out = ok(d, &["eval", "--net", "net.json", "--model", "model.json", "--mc", "20000"]);
    let dist: f64 = field(&out, "d_p(h,f)").parse().unwrap();
    assert!(dist <= 1e-6, "{dist}");
}

#[test]
fn zero_model_matches_the_reference_and_eval_is_repeatable() {
    let dir = demo();
    let d = dir.path();
    ok(d, &["fit", "--net", "net.json", "--probes", "probes.json", "--reg", "l1", "--lambda", "10", "--out", "zero.json"]);
    let args = ["eval", "--net", "net.json", "--model", "zero.json", "--mc", "20000", "--seed", "9"];
    let first = ok(d, &args);
    assert_eq!(field(&first, "d_p(h,f)"), field(&first, "d_p(0,f)"));
    assert_eq!(first, ok(d, &args));
}

#[test]
fn eval_rejects_mismatched_dimensions() {
    let dir = demo();
    let d = dir.path();
    ok(d, &["fit", "--net", "net.json", "--probes", "probes.json", "--out", "m.json"]);
    ok(d, &["gen", "--arch", "3,2,1", "--out", "net3.json"]);
    let out = plrecon(d, &["eval", "--net", "net3.json", "--model", "m.json"]);
    assert!(!out.status.success());
}

#[test]
fn report_tabulates_the_grid() {
    let dir = demo();
    let d = dir.path();
    ok(d, &["fit", "--net", "net.json", "--probes", "probes.json", "--out", "m.json"]);
    let args = [
        "report", "--net", "net.json", "--fit", "m.json.report.json", "--lambda-grid", "0.0001,0.001,0.01,0.1,1",
        "--region-samples", "5000", "--mc", "5000", "--out", "r.json",
    ];
    let out = ok(d, &args);
    assert_eq!(field(&out, "n1"), "3");
    let report = json(d, "r.json");
    assert_eq!(report["conjecture"]["lambda_grid"].as_array().unwrap().len(), 5);
    assert_eq!(report["conjecture"]["first_layer_width"], 3);
    let rows = out.lines().filter(|l| l.starts_with(char::is_numeric)).count();
    assert_eq!(rows, 5);
    let before = std::fs::read(d.join("r.json")).unwrap();
    assert_eq!(ok(d, &args), out);
    assert_eq!(std::fs::read(d.join("r.json")).unwrap(), before);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.json"), r#"{"arch":"2,4,1","seed":3,"out":"cfg.json"}"#).unwrap();
    let out = ok(d, &["--config", "run.json", "gen"]);
    assert!(out.contains("D=17"));
    assert!(d.join("cfg.json").exists());
    let out = ok(d, &["--config", "run.json", "gen", "--arch", "2,3,1", "--out", "flag.json"]);
    assert!(out.contains("D=13"));
    std::fs::write(d.join("bad.json"), r#"{"archh":"2,4,1"}"#).unwrap();
    assert!(!plrecon(d, &["--config", "bad.json", "gen"]).status.success());
}
