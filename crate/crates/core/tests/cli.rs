use std::process::{Command, Output};

use serde_json::Value;

fn qou(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qou"))
        .args(args)
        .env_remove("QOU_THREADS")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

#[test]
fn alpha_at_zero() {
    let out = qou(&["alpha", "--q", "0"]);
    let v = json(&out);
    let a = v["alpha_q"].as_f64().unwrap();
    assert!((a - 1.0 / (18.0 * std::f64::consts::PI.powi(2))).abs() < 1e-12);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"alpha_q\":0.0056289546467965"), "{text}");
    assert_eq!(v["config"]["q"].as_f64(), Some(0.0));
}

#[test]
fn density_outside_support_is_zero() {
    let v = json(&qou(&["density", "--q", "0.5", "--x", "99"]));
    assert_eq!(v["value"].as_f64(), Some(0.0));
    let v = json(&qou(&[
        "transition",
        "--q",
        "-0.5",
        "--t",
        "1",
        "--x",
        "0.1",
        "--y",
        "-0.3",
    ]));
    assert!(v["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn argument_errors_exit_with_two() {
    let bad_q = qou(&["alpha", "--q", "1.5"]);
    assert_eq!(bad_q.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_q.stderr).contains("(-1, 1)"));
    assert_eq!(qou(&["density", "--x", "0"]).status.code(), Some(2));
    assert_eq!(
        qou(&["alpha", "--q", "0", "--bogus"]).status.code(),
        Some(2)
    );
    assert_eq!(
        qou(&["alpha", "--q", "0", "--format", "csv"]).status.code(),
        Some(2)
    );
    assert_eq!(
        qou(&["transition", "--q", "0", "--t", "0", "--x", "0", "--y", "0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        qou(&["count-jumps", "--q", "0", "--n", "2", "--epsilon", "3"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn computation_failure_exits_with_one() {
    let out = qou(&[
        "experiment",
        "jump-probability",
        "--q",
        "0",
        "--epsilon",
        "0.3",
        "--n",
        "3",
        "--replicates",
        "100",
        "--nx",
        "32",
        "--nu",
        "64",
        "--step-cap",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}

#[test]
fn help_lists_flags() {
    let out = qou(&["experiment", "--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--q",
        "--epsilon",
        "--n",
        "--replicates",
        "--seed",
        "--out",
        "--format",
        "--threads",
        "--timing",
        "--scale-lambda",
        "--ladder",
        "--grid",
        "--step-cap",
        "--nx",
        "--nu",
    ] {
        assert!(text.contains(flag), "missing {flag}");
    }
}

#[test]
fn poisson_reports_are_byte_identical() {
    let args = [
        "experiment",
        "poisson",
        "--q",
        "0",
        "--epsilon",
        "0.45",
        "--n",
        "5",
        "--scale-lambda",
        "0.5",
        "--replicates",
        "200",
        "--seed",
        "7",
        "--nx",
        "128",
        "--nu",
        "256",
    ];
    let a = qou(&args);
    let b = qou(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let mut threaded: Vec<&str> = args.to_vec();
    threaded.extend(["--threads", "2"]);
    assert_eq!(a.stdout, qou(&threaded).stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["name"], "mc_poisson_limit");
    assert!(v["wall_time"].is_null());
    assert_eq!(v["seed"]["master_seed"], 7);
}

#[test]
fn sample_path_csv_and_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("path.csv");
    let out = qou(&[
        "sample-path",
        "--q",
        "0",
        "--n",
        "2",
        "--horizon",
        "2",
        "--seed",
        "5",
        "--nx",
        "32",
        "--nu",
        "64",
        "--format",
        "csv",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,x");
    assert_eq!(lines.len(), 1 + 9);
    assert!(lines[1].starts_with("0.00,"));
    assert!(lines[9].starts_with("2.00,"));
}

#[test]
fn count_jumps_schema() {
    let v = json(&qou(&[
        "count-jumps",
        "--q",
        "0",
        "--epsilon",
        "0.5",
        "--n",
        "4",
        "--horizon",
        "3",
        "--seed",
        "1",
        "--nx",
        "32",
        "--nu",
        "64",
    ]));
    for key in ["epsilon", "n", "window", "per_interval", "total", "config"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["per_interval"].as_array().unwrap().len(), 3);
}

#[test]
fn ladder_csv_output() {
    let out = qou(&[
        "experiment",
        "ladder",
        "--q",
        "0",
        "--ladder",
        "0.2,0.1",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("epsilon,value,stderr\n0.2,"));
    let v = json(&qou(&[
        "experiment",
        "jump-rate",
        "--q",
        "0",
        "--epsilon",
        "0.1",
    ]));
    assert_eq!(v["config"]["experiment"], "jump-rate");
}
