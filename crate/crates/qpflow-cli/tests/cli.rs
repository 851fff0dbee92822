//! End-to-end tests of the `qpflow` binary: exit codes, determinism, and
//! the frozen canonicalization fixtures.

use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn qpflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpflow"))
        .args(args)
        .env_remove("QPFLOW_BUDGET")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

fn temp_path(tag: &str) -> PathBuf {
    std::env::temp_dir().join(format!("qpflow-test-{}-{tag}", std::process::id()))
}

#[test]
fn verify_passes_on_all_bundled_examples() {
    for name in ["logistic.txt", "predator_prey.txt", "nonsquare_root.txt"] {
        let out = qpflow(&[
            "verify",
            "--system",
            fixture(name).to_str().unwrap(),
            "--t-end",
            "5",
            "--tol",
            "1e-10",
        ]);
        assert!(
            out.status.success(),
            "{name} failed: {}{}",
            stdout(&out),
            stderr(&out)
        );
        assert!(stdout(&out).contains("verdict: PASS"), "{name}: {}", stdout(&out));
    }
}

#[test]
fn solve_outputs_are_byte_identical_across_runs() {
    let run = |tag: &str| {
        let path = temp_path(tag);
        let out = qpflow(&[
            "solve",
            "--system",
            fixture("predator_prey.txt").to_str().unwrap(),
            "--t-end",
            "3",
            "--tol",
            "1e-10",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        let bytes = std::fs::read(&path).unwrap();
        std::fs::remove_file(&path).ok();
        (bytes, out.stderr)
    };
    let (first_file, first_err) = run("det-a");
    let (second_file, second_err) = run("det-b");
    assert_eq!(first_file, second_file);
    assert_eq!(first_err, second_err);
}

#[test]
fn solve_csv_shape() {
    let out = qpflow(&[
        "solve",
        "--system",
        fixture("logistic.txt").to_str().unwrap(),
        "--t-end",
        "1",
        "--tol",
        "1e-8",
    ]);
    assert!(out.status.success());
    let body = stdout(&out);
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("t,x1"));
    let first = lines.next().unwrap();
    assert!(first.starts_with("0.0000000000000000e0,5.0000000000000000e-1"));
    let diag = stderr(&out);
    assert!(diag.contains("initial_radius_estimate:"));
    assert!(diag.contains("accepted_steps:"));
}

#[test]
fn solve_json_format_parses() {
    let out = qpflow(&[
        "solve",
        "--system",
        fixture("logistic.txt").to_str().unwrap(),
        "--t-end",
        "1",
        "--format",
        "json",
    ]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(parsed["method"], "taylor");
    assert!(parsed["times"].as_array().unwrap().len() >= 2);
}

#[test]
fn canonicalize_matches_frozen_fixtures() {
    for (system, frozen) in [
        ("logistic.txt", "expected/logistic_lv.json"),
        ("predator_prey.txt", "expected/predator_prey_lv.json"),
        ("nonsquare_root.txt", "expected/nonsquare_root_lv.json"),
    ] {
        let out = qpflow(&[
            "canonicalize",
            "--system",
            fixture(system).to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{system}: {}", stderr(&out));
        let expected = std::fs::read_to_string(fixture(frozen)).unwrap();
        assert_eq!(stdout(&out), expected, "{system} canonicalization drifted");
    }
}

#[test]
fn canonicalize_square_of_square_system() {
    let out = qpflow(&[
        "canonicalize",
        "--system",
        fixture("quadratic_blowup.txt").to_str().unwrap(),
        "--square",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(parsed["B"][0][0], 1.0);
}

#[test]
fn canonicalize_square_rejects_non_square_system() {
    let out = qpflow(&[
        "canonicalize",
        "--system",
        fixture("logistic.txt").to_str().unwrap(),
        "--square",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error[input]:"));
}

#[test]
fn canonicalize_square_reports_singular_b() {
    let path = temp_path("singular.json");
    std::fs::write(
        &path,
        r#"{"n":2,"N":2,"A":[[1.0,0.0],[0.0,1.0]],"B":[[1.0,1.0],[1.0,1.0]],"x0":[1.0,1.0]}"#,
    )
    .unwrap();
    let out = qpflow(&[
        "canonicalize",
        "--system",
        path.to_str().unwrap(),
        "--square",
    ]);
    std::fs::remove_file(&path).ok();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error[input]:") && err.contains("singular"), "{err}");
}

#[test]
fn missing_system_file_is_an_input_error() {
    let out = qpflow(&["solve", "--system", "/nonexistent.qp", "--t-end", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "single-line error, got: {err}");
    assert!(err.starts_with("error[input]:"));
}

#[test]
fn order_outside_range_is_rejected() {
    let out = qpflow(&[
        "solve",
        "--system",
        fixture("logistic.txt").to_str().unwrap(),
        "--t-end",
        "1",
        "--order",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error[input]:"));
}

#[test]
fn blowup_is_a_numeric_error() {
    let out = qpflow(&[
        "solve",
        "--system",
        fixture("quadratic_blowup.txt").to_str().unwrap(),
        "--t-end",
        "2",
        "--tol",
        "1e-12",
        "--order",
        "8",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.lines().last().unwrap().starts_with("error[numeric]:"), "{err}");
}

#[test]
fn diverged_verification_exits_one() {
    let out = qpflow(&[
        "verify",
        "--system",
        fixture("predator_prey.txt").to_str().unwrap(),
        "--t-end",
        "20",
        "--tol",
        "1e-4",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("verdict: FAIL"));
    assert!(stderr(&out).starts_with("error[verify]:"));
}

#[test]
fn tensor_dump_and_row_sum_check() {
    let out = qpflow(&["tensor", "--N", "2", "--k", "3", "--i", "0"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let body = stdout(&out);
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("i,i1,i2,i3,j1,j2,j3,value"));
    // Summing nonzero entries over everything = (number of upper tuples) * k!.
    let total: u64 = lines
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 8 * 6);
    assert!(stderr(&out).contains("row_sum_check: PASS"));
}

#[test]
fn coeffs_table_agrees_with_oracle() {
    let out = qpflow(&[
        "coeffs",
        "--system",
        fixture("logistic.txt").to_str().unwrap(),
        "--k",
        "6",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let body = stdout(&out);
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("variable,k,recursion,oracle,rel_dev"));
    let mut saw_x = false;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        saw_x |= fields[0].starts_with('x');
        let dev: f64 = fields[4].parse().unwrap();
        assert!(dev < 1e-10, "{line}");
    }
    assert!(saw_x, "original-variable rows missing");
}

#[test]
fn coeffs_json_emits_a_series_bundle() {
    let out = qpflow(&[
        "coeffs",
        "--system",
        fixture("logistic.txt").to_str().unwrap(),
        "--k",
        "5",
        "--format",
        "json",
    ]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(parsed["order"], 5);
    assert_eq!(parsed["coeffs"][0][0], 0.5);
}

#[test]
fn budget_env_var_caps_enumeration() {
    let out = Command::new(env!("CARGO_BIN_EXE_qpflow"))
        .args(["tensor", "--N", "3", "--k", "5", "--i", "0"])
        .env("QPFLOW_BUDGET", "10")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("budget"), "{err}");
}
