use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_carleman-lab"))
}

fn run(args: &[&str], config: &str, out: &Path) -> Output {
    let dir = out.parent().unwrap();
    let cfg = dir.join(format!("{}.toml", out.file_name().unwrap().to_string_lossy()));
    std::fs::write(&cfg, config).unwrap();
    bin()
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

const SQUARE: &str = r#"
[domain]
kind = "rectangle"
observed = ["x_hi", "y_hi"]
[grid]
n_x = 8
n_t = 8
[weight]
params = { center = [-1.0, -1.0] }
"#;

const SMALL_STABILITY: &str = "[grid]\nn_x = 12\nn_t = 12\n[ensemble]\npairs = 5\nseed = 4\n";

#[test]
fn square_configuration_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("square");
    let o = run(&["check-weight"], SQUARE, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = read_json(&out.join("report.json"));
    let min = rep["result"]["ramsai_min"].as_f64().unwrap();
    assert!((min - 8.0).abs() < 1e-9);
    assert!(rep["result"]["lambda"].as_f64().is_some());
    for f in ["report.csv", "manifest.json"] {
        assert!(out.join(f).exists());
    }
}

#[test]
fn condition_one_failure_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("left");
    let o = run(&["check-weight"], "[domain]\nobserved = [\"left\"]\n[grid]\nn_x = 8\nn_t = 8\n", &out);
    assert_eq!(o.status.code(), Some(1));
    let rep = read_json(&out.join("report.json"));
    assert_eq!(rep["passed"], false);
}

#[test]
fn unknown_subcommand_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["fly"], "", &tmp.path().join("x"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stability-sweep"));
}

#[test]
fn missing_arguments_exit_two() {
    let o = bin().arg("check-weight").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["check-weight", "--config", "/nonexistent/x.toml"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn misspelled_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["carleman-verify"], "[weight]\nlamda = 0.1\n", &tmp.path().join("typo"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lamda"));
}

#[test]
fn empty_observed_boundary_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["stability-sweep"], "[domain]\nobserved = []\n", &tmp.path().join("empty"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("domain.observed"));
}

#[test]
fn artifacts_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run(&["stability-sweep"], SMALL_STABILITY, &a).status.code(), Some(0));
    assert_eq!(run(&["stability-sweep"], SMALL_STABILITY, &b).status.code(), Some(0));
    for f in ["report.json", "report.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = tmp.path().join("c");
    let o = run(&["stability-sweep", "--seed", "99"], SMALL_STABILITY, &c);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(std::fs::read(a.join("report.csv")).unwrap(), std::fs::read(c.join("report.csv")).unwrap());
    let m = read_json(&c.join("manifest.json"));
    assert_eq!(m["seed"], 99);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    let csv = String::from_utf8(std::fs::read(a.join("report.csv")).unwrap()).unwrap();
    assert!(csv.starts_with("pair_id,num,h3_term,boundary_terms,ratio,flags\n"));
}

#[test]
fn coefficient_run_flags_identical_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("coef");
    let cfg = "[grid]\nn_x = 16\nn_t = 16\n[ensemble]\npairs = 3\n[checks]\nlevels = [16, 32]\n";
    let o = run(&["invert-coefficient"], cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = String::from_utf8(std::fs::read(out.join("report.csv")).unwrap()).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",,identical_pair"), "{csv}");
}
