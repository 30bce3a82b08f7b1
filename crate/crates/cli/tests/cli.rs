//! End-to-end tests of the binary: output formats, exit codes, round trips.

use std::process::{Command, Output};

use sync_landscape_cli::io::InstanceFile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sync-landscape"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

#[test]
fn alpha_json_reports_threshold_and_context() {
    let out = run(&["alpha", "--p", "5", "--d", "1", "--output", "json"]);
    assert!(out.status.success());
    let value: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(value["alpha_g"]["alpha"].as_f64().unwrap(), 5.0);
    assert_eq!(value["feasible"], serde_json::Value::Bool(true));

    let out = run(&["alpha", "--p", "3", "--d", "2", "--output", "json"]);
    let value: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let alpha = value["alpha_g"]["alpha"].as_f64().unwrap();
    assert!((alpha - 1.1141).abs() < 5e-4);
}

#[test]
fn alpha_rejects_invalid_pairs_with_usage_exit() {
    let out = run(&["alpha", "--p", "2", "--d", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn table_matches_reference_cells() {
    let out = run(&["table", "--p-max", "11", "--d-max", "5"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "d\\p,2,3,4,5,6,7,8,9,10,11");
    let cell = |d: usize, p: usize| rows[d].split(',').nth(p - 1).unwrap().to_string();
    assert_eq!(cell(1, 11), "11.0000");
    assert_eq!(cell(2, 7), "2.5736");
    assert_eq!(cell(5, 7), "1.1025");
    assert_eq!(cell(2, 2), "x");
    assert_eq!(cell(4, 5), "<1");
    assert_eq!(cell(5, 6), "<1");
}

#[test]
fn figure_data_keeps_dominance_order() {
    let out = run(&["figure-data", "--d", "2", "--p-min", "4", "--p-max", "9"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "p,alpha_g,alpha_m,alpha_tau1");
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let (p, alpha_g, alpha_m, tau1) = (cols[0] as usize, cols[1], cols[2], cols[3]);
        assert!(alpha_g >= alpha_m - 1e-9, "row p={p}");
        assert!(alpha_m >= tau1 - 1e-9, "row p={p}");
        assert_eq!(tau1, (p as f64 + 2.0 - 2.0) / 4.0, "tau = 1 column closed form");
    }
}

#[test]
fn verify_exit_codes_cover_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let twisted = dir.path().join("twisted.json");
    let out = run(&[
        "counterexample",
        "--p",
        "4",
        "--d",
        "2",
        "--out",
        twisted.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let cond = report["certificate"]["cond"].as_f64().unwrap();
    assert!((cond - 8.0 / 3.0).abs() < 1e-9);
    assert_eq!(report["criticality"]["is_second_order"], true);
    assert_eq!(report["dual"]["check"]["feasible"], true);

    // Verified but above the threshold: exit 3.
    let out = run(&["verify", "--instance", twisted.to_str().unwrap(), "--p", "4"]);
    assert_eq!(out.status.code(), Some(3));

    // Benign noiseless instance: exit 0 with cond 1.
    let benign = dir.path().join("benign.json");
    let out = run(&[
        "experiment",
        "--model",
        "od-gaussian",
        "--n",
        "10",
        "--d",
        "2",
        "--trials",
        "1",
        "--emit-instance",
        benign.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = run(&["verify", "--instance", benign.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let value: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((value["report"]["cond"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    // Noisy instance with a refined candidate: certified and benign.
    let noisy = dir.path().join("noisy.json");
    let out = run(&[
        "experiment",
        "--model",
        "od-gaussian",
        "--n",
        "20",
        "--d",
        "2",
        "--sigma",
        "0.05",
        "--trials",
        "1",
        "--emit-instance",
        noisy.to_str().unwrap(),
        "--refine-candidate",
    ]);
    assert!(out.status.success());
    let out = run(&["verify", "--instance", noisy.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "refined noisy candidate verifies");

    // The same instance with the raw ground truth fails KKT under noise.
    let raw = dir.path().join("raw.json");
    let out = run(&[
        "experiment",
        "--model",
        "od-gaussian",
        "--n",
        "20",
        "--d",
        "2",
        "--sigma",
        "0.05",
        "--trials",
        "1",
        "--emit-instance",
        raw.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = run(&["verify", "--instance", raw.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "raw candidate is not stationary");

    // Broken symmetry: exit 2.
    let mut parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&benign).unwrap()).unwrap();
    parsed["A"][1] = serde_json::json!(0.5);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&parsed).unwrap()).unwrap();
    let out = run(&["verify", "--instance", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    // KKT failure: negate the data so the certificate is indefinite.
    let mut parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&benign).unwrap()).unwrap();
    let flipped: Vec<serde_json::Value> = parsed["A"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| serde_json::json!(-v.as_f64().unwrap()))
        .collect();
    parsed["A"] = serde_json::Value::Array(flipped);
    let flipped_path = dir.path().join("flipped.json");
    std::fs::write(&flipped_path, serde_json::to_string(&parsed).unwrap()).unwrap();
    let out = run(&["verify", "--instance", flipped_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn instance_json_round_trips_bit_exactly(){
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inst.json");
    let out = run(&[
        "experiment",
        "--model",
        "od-gaussian",
        "--n",
        "6",
        "--d",
        "2",
        "--sigma",
        "0.3",
        "--trials",
        "1",
        "--seed",
        "42",
        "--emit-instance",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    let parsed: InstanceFile = serde_json::from_str(&text).unwrap();
    let core = parsed.into_core().unwrap();
    let re_encoded = serde_json::to_string(&InstanceFile::from_core(&core)).unwrap();
    let a: InstanceFile = serde_json::from_str(&text).unwrap();
    let b: InstanceFile = serde_json::from_str(&re_encoded).unwrap();
    assert_eq!(a.a.len(), b.a.len());
    for (x, y) in a.a.iter().zip(&b.a) {
        assert_eq!(x.to_bits(), y.to_bits(), "A entries must round-trip bitwise");
    }
    for (x, y) in a.z.as_ref().unwrap().iter().zip(b.z.as_ref().unwrap()) {
        assert_eq!(x.to_bits(), y.to_bits(), "Z entries must round-trip bitwise");
    }
}

#[test]
fn seeded_invocations_are_byte_reproducible() {
    let args = [
        "experiment",
        "--model",
        "od-gaussian",
        "--n",
        "8",
        "--d",
        "1",
        "--sigma",
        "0.2",
        "--trials",
        "4",
        "--seed",
        "7",
    ];
    let first = run(&args);
    let second = run(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout, "stdout must be byte-identical");
}

#[test]
fn solver_stays_at_the_twisted_state() {
    let out = run(&[
        "experiment",
        "--model",
        "counterexample",
        "--p",
        "3",
        "--d",
        "1",
        "--t-scale",
        "1.0",
        "--trials",
        "1",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let row = text.lines().nth(1).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    let cond: f64 = cols[3].parse().unwrap();
    let moved: f64 = cols[5].parse().unwrap();
    let iters: usize = cols[6].parse().unwrap();
    assert!((cond - 3.0).abs() < 1e-9);
    assert!(moved < 1e-10, "solver moved away from the critical point");
    assert!(iters <= 2);
}

#[test]
fn solve_writes_trace_and_reports_recovery() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    run(&[
        "experiment",
        "--model",
        "od-gaussian",
        "--n",
        "10",
        "--d",
        "1",
        "--trials",
        "1",
        "--emit-instance",
        inst.to_str().unwrap(),
    ]);
    let trace = dir.path().join("trace.csv");
    let out = run(&[
        "solve",
        "--instance",
        inst.to_str().unwrap(),
        "--seed",
        "3",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let value: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(value["converged"], true);
    assert!(value["recovery_error"].as_f64().unwrap() < 1e-6);
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert!(trace_text.starts_with("iter,objective,grad_norm\n"));
    assert!(trace_text.lines().count() > 2);
    // Monotone objective column.
    let objs: Vec<f64> = trace_text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    for pair in objs.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-9);
    }
}

#[test]
fn montecarlo_reports_small_relative_error() {
    let out = run(&[
        "montecarlo", "--n", "4", "--d", "2", "--p", "4", "--tau", "0.3", "--trials", "40000",
        "--seed", "11", "--which", "l-cov",
    ]);
    assert!(out.status.success());
    let value: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(value["relative_frobenius_error"].as_f64().unwrap() <= 5e-2);
}
