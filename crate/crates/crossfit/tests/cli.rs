//! End-to-end checks of the command-line interface: exit codes, file
//! formats, and determinism.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use common::serialize_tests;
use crossfit::io::FitOutput;
use crossfit::simulate::SimTruth;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crossfit"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny.csv")
}

#[test]
fn fit_fixture_emits_valid_json_with_sum_zero_effects() {
    let _guard = serialize_tests();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("result.json");
    let status = bin()
        .args(["fit"])
        .arg(fixture())
        .args(["--intercept", "--full-cov", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let text = std::fs::read_to_string(&out).unwrap();
    let parsed: FitOutput = serde_json::from_str(&text).unwrap();
    assert!(parsed.converged);
    assert_eq!(parsed.coefficients.len(), 2);
    assert_eq!(parsed.coefficients[0].name, "intercept");
    assert_eq!(parsed.epsilon, 1e-8);
    assert!(parsed.covariance.is_some());

    // re-serializing the parsed result reproduces the bytes
    let mut reserialized = serde_json::to_vec_pretty(&parsed).unwrap();
    reserialized.push(b'\n');
    assert_eq!(text.as_bytes(), reserialized.as_slice());
}

#[test]
fn exit_codes_for_input_error_and_nonconvergence() {
    let _guard = serialize_tests();
    let dir = tempfile::tempdir().unwrap();

    // missing file: input error
    let status = bin()
        .args(["fit", "no-such-file.csv", "--out"])
        .arg(dir.path().join("x.json"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    // malformed header: input error
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b,c\n1,2,3\n").unwrap();
    let status = bin()
        .args(["fit"])
        .arg(&bad)
        .args(["--out"])
        .arg(dir.path().join("y.json"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    // starved iteration budget: non-convergence, but the result is written
    let out = dir.path().join("partial.json");
    let status = bin()
        .args(["fit"])
        .arg(fixture())
        .args(["--intercept", "--max-outer", "1", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let parsed: FitOutput = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(!parsed.converged);
    assert_eq!(parsed.outer_iterations, 1);
}

#[test]
fn simulate_writes_design_and_truth_and_is_deterministic() {
    let _guard = serialize_tests();
    let dir = tempfile::tempdir().unwrap();
    let csv1 = dir.path().join("d1.csv");
    let csv2 = dir.path().join("d2.csv");
    for out in [&csv1, &csv2] {
        let status = bin()
            .args(["simulate", "--s", "2000", "--preset", "b", "--seed", "9", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(std::fs::read(&csv1).unwrap(), std::fs::read(&csv2).unwrap());

    let truth: SimTruth =
        serde_json::from_str(&std::fs::read_to_string(csv1.with_extension("truth.json")).unwrap())
            .unwrap();
    assert_eq!(truth.beta[0], -2.0);
    assert_eq!(truth.beta[7], 1.5);

    let header = std::fs::read_to_string(&csv1).unwrap();
    assert!(header.starts_with("row,col,y,x1,x2,x3,x4,x5,x6,x7\n"));
}

#[test]
fn fit_of_simulated_data_is_deterministic_single_threaded() {
    let _guard = serialize_tests();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    assert!(bin()
        .args(["simulate", "--s", "1500", "--seed", "5", "--out"])
        .arg(&csv)
        .status()
        .unwrap()
        .success());
    let out1 = dir.path().join("r1.json");
    let out2 = dir.path().join("r2.json");
    for out in [&out1, &out2] {
        let status = bin()
            .args(["fit"])
            .arg(&csv)
            .args(["--intercept", "--compare-naive", "--threads", "1", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());

    let parsed: FitOutput =
        serde_json::from_str(&std::fs::read_to_string(&out1).unwrap()).unwrap();
    let report = parsed.comparison.expect("--compare-naive adds the report");
    assert_eq!(report.naivete.len(), parsed.coefficients.len());
    assert!(report.naivete[0] > 1.0);
    assert!(report.max_naivete >= *report
        .naivete
        .iter()
        .max_by(|a, b| a.total_cmp(b))
        .unwrap());
}

#[test]
fn bench_and_verify_emit_expected_tables() {
    let _guard = serialize_tests();
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.csv");
    let status = bin()
        .args([
            "bench",
            "--grid",
            "500,1000",
            "--fitters",
            "backfit,naive",
            "--replicates",
            "2",
            "--seed",
            "3",
            "--out",
        ])
        .arg(&table)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&table).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("fitter,S,N,metric,value,replicate"));
    for fitter in ["backfit", "naive"] {
        for metric in ["sq_err_intercept", "sq_err_noninter"] {
            let rows = text
                .lines()
                .filter(|l| l.starts_with(fitter) && l.contains(metric))
                .count();
            assert!(rows >= 2, "{fitter}/{metric}: {rows} rows");
        }
    }

    let report = dir.path().join("report.json");
    let status = bin()
        .args(["verify", "--s", "1000,3000", "--seed", "2", "--out"])
        .arg(&report)
        .status()
        .unwrap();
    assert!(status.success());
    let reports: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(reports.len(), 2);
    for r in &reports {
        let rho = r["spectral_radius"].as_f64().unwrap();
        assert!(rho > 0.0 && rho < 1.0);
        assert!(r["err_a"].as_f64().unwrap() >= 0.0);
    }
    // error over rows shrinks from S = 1e3 to S = 3e3
    let err_over_r = |v: &serde_json::Value| {
        v["err_a"].as_f64().unwrap() / v["n_rows"].as_f64().unwrap()
    };
    assert!(err_over_r(&reports[1]) < err_over_r(&reports[0]));
}
