use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disperc")).args(args).output().expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON report")
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    dir.join(format!("{}-{name}", std::process::id()))
}

#[test]
fn thresholds_match_closed_forms() {
    let out = run(&["thresholds", "--dim", "2", "--beta", "0.01", "--h", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let r = &report(&out)["results"];
    assert!((r["koko"].as_f64().unwrap() - (4.0f64 / 3.0).ln() / 16.0).abs() < 1e-15);
    assert!((r["p"].as_f64().unwrap() - 2.0 * 0.08f64.sinh()).abs() < 1e-15);
    assert!((r["p"].as_f64().unwrap() - 0.16017).abs() < 1e-5);
    assert_eq!(r["dobrushin"], Value::Bool(4.0 * 0.01f64.tanh() < 1.0));
    let racine = 9.0 * ((0.24f64).exp() - (0.08f64).exp()) < 1.0;
    assert_eq!(r["racine2"], Value::Bool(racine));
}

#[test]
fn gap_of_a_single_free_spin_is_one() {
    let out = run(&["gap-audit", "--dim", "1", "--box-sites", "1", "--beta", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let rep = report(&out);
    assert!((rep["results"]["gap"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((rep["results"]["bound"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(rep["assertions"].as_array().unwrap().iter().all(|a| a["pass"] == Value::Bool(true)));
}

#[test]
fn invalid_parameters_exit_with_two_and_still_report() {
    let out = run(&["thresholds", "--beta", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(report(&out)["error"].as_str().unwrap().contains("beta"));

    let out = run(&["relax", "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["gap-audit", "--box-sites", "30"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flags_print_usage() {
    let out = run(&["thresholds", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn reports_are_deterministic_apart_from_wall_time() {
    let args = ["coupling-audit", "--beta", "0.05", "--mode", "two-stage", "--replicas", "200", "--seed", "5"];
    let mut a = report(&run(&args));
    let mut b = report(&run(&args));
    a["wall_time"] = Value::Null;
    b["wall_time"] = Value::Null;
    assert_eq!(a.to_string(), b.to_string());

    let mut c = report(&run(&["coupling-audit", "--beta", "0.05", "--mode", "two-stage", "--replicas", "200", "--seed", "6"]));
    c["wall_time"] = Value::Null;
    c["config"]["seed"] = a["config"]["seed"].clone();
    assert_ne!(a.to_string(), c.to_string());
}

#[test]
fn flags_override_the_config_file() {
    let path = scratch("override.cfg");
    std::fs::write(&path, "dim = 1\nbeta = 0.2\nbox-sites = 4\nseed = 9\n").unwrap();
    let out = run(&["thresholds", "--config", path.to_str().unwrap(), "--beta", "0.05"]);
    assert_eq!(out.status.code(), Some(0));
    let cfg = &report(&out)["config"];
    assert_eq!(cfg["dim"], 1);
    assert_eq!(cfg["beta"], 0.05);
    assert_eq!(cfg["box_sites"], 4);
    assert_eq!(cfg["seed"], 9);

    std::fs::write(&path, "dim = 1\nnonsense = 3\n").unwrap();
    let out = run(&["thresholds", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(report(&out)["error"].as_str().unwrap().contains("line 2"));
}

#[test]
fn exported_probabilities_decode_to_the_box_measure() {
    let path = scratch("probs.bin");
    let out = run(&["gap-audit", "--dim", "1", "--box-sites", "3", "--beta", "0", "--export-probs", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = disperc::model::decode_probabilities(&std::fs::read(&path).unwrap(), 16).unwrap();
    assert_eq!(v.n_sites, 3);
    assert!(v.probs.iter().all(|p| (p - 0.125).abs() < 1e-15));
}

#[test]
fn relax_writes_a_curve_and_respects_the_gap() {
    let path = scratch("relax.csv");
    let out = run(&[
        "relax", "--dim", "2", "--box-sites", "5", "--beta", "0.05", "--time-grid", "0.5,1,2", "--functional",
        "spin(0) + corr(1,2)", "--csv", path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,value,se");
    assert_eq!(lines.len(), 4);
    assert_eq!(report(&out)["assertions"].as_array().unwrap().len(), 3);
}
