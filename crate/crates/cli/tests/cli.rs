//! End-to-end tests driving the compiled binary through files and exit codes.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gowerslab"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary should spawn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal exit")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn report(dir: &Path, name: &str) -> Value {
    let raw = fs::read_to_string(dir.join(name)).expect("report file exists");
    serde_json::from_str(&raw).expect("report is valid JSON")
}

/// Writes e(a x^2 / n) on Z/n as a two-column CSV function file.
fn write_quadratic(dir: &Path, n: u64, a: u64, name: &str) {
    let rows: Vec<String> = (0..n)
        .map(|x| {
            let t = TAU * ((a * x * x) % n) as f64 / n as f64;
            format!("{},{}", t.cos(), t.sin())
        })
        .collect();
    fs::write(dir.join(name), rows.join("\n") + "\n").unwrap();
}

#[test]
fn norm_fast_and_naive_modes_agree_through_reports() {
    let tmp = tempfile::tempdir().unwrap();
    write_quadratic(tmp.path(), 16, 3, "f.csv");
    let fast = run_in(
        tmp.path(),
        &["norm", "--group", "Z/16", "--d", "3", "--mode", "fast", "--verify", "f.csv"],
    );
    assert_eq!(code(&fast), 0, "stderr: {}", stderr(&fast));
    let naive = run_in(
        tmp.path(),
        &[
            "norm", "--group", "Z/16", "--d", "3", "--mode", "naive", "--output",
            "naive.json", "f.csv",
        ],
    );
    assert_eq!(code(&naive), 0, "stderr: {}", stderr(&naive));

    let a = report(tmp.path(), "norm-report.json");
    let b = report(tmp.path(), "naive.json");
    let va = a["results"]["norm"].as_f64().unwrap();
    let vb = b["results"]["norm"].as_f64().unwrap();
    assert!((va - 1.0).abs() < 1e-9, "quadratic phase has full norm, got {va}");
    assert!((va - vb).abs() < 1e-9 * va.max(1.0));
    // The verified run also records the cross-mode recomputation.
    assert_eq!(a["results"]["cross_mode"]["mode"], "naive");
    assert_eq!(a["config"]["command"], "norm");
    assert_eq!(a["config"]["group"], "Z/16");
}

#[test]
fn function_files_may_be_json_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    write_quadratic(tmp.path(), 16, 3, "f.csv");
    let pairs: Vec<[f64; 2]> = (0..16u64)
        .map(|x| {
            let t = TAU * ((3 * x * x) % 16) as f64 / 16.0;
            [t.cos(), t.sin()]
        })
        .collect();
    fs::write(
        tmp.path().join("f.json"),
        serde_json::to_string(&pairs).unwrap(),
    )
    .unwrap();
    let csv = run_in(tmp.path(), &["norm", "--group", "Z/16", "--output", "c.json", "f.csv"]);
    let json = run_in(tmp.path(), &["norm", "--group", "Z/16", "--output", "j.json", "f.json"]);
    assert_eq!(code(&csv), 0);
    assert_eq!(code(&json), 0, "stderr: {}", stderr(&json));
    let vc = report(tmp.path(), "c.json")["results"]["norm"].as_f64().unwrap();
    let vj = report(tmp.path(), "j.json")["results"]["norm"].as_f64().unwrap();
    assert_eq!(vc, vj);
}

#[test]
fn empty_input_is_a_hard_error_naming_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("empty.csv"), "").unwrap();
    let out = run_in(tmp.path(), &["norm", "--group", "Z/16", "empty.csv"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("empty.csv"), "stderr: {}", stderr(&out));
}

#[test]
fn malformed_field_reports_file_line_and_field() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.csv"), "1,0\n0,1\n1,oops\n0,1\n").unwrap();
    let out = run_in(tmp.path(), &["norm", "--group", "Z/4", "bad.csv"]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("bad.csv"), "stderr: {err}");
    assert!(err.contains("line 3"), "stderr: {err}");
    assert!(err.contains("im"), "stderr: {err}");
}

#[test]
fn unknown_group_string_is_a_hard_error() {
    let tmp = tempfile::tempdir().unwrap();
    write_quadratic(tmp.path(), 16, 3, "f.csv");
    let out = run_in(tmp.path(), &["norm", "--group", "Z/0", "f.csv"]);
    assert_eq!(code(&out), 1);
    assert!(!stderr(&out).is_empty());
}

#[test]
fn budget_env_variable_caps_the_work() {
    let tmp = tempfile::tempdir().unwrap();
    write_quadratic(tmp.path(), 16, 3, "f.csv");
    let out = bin()
        .args(["norm", "--group", "Z/16", "--d", "3", "--mode", "naive", "f.csv"])
        .env("GOWERSLAB_BUDGET", "10")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 1, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("work"), "stderr: {}", stderr(&out));
}

#[test]
fn dft_round_trips_under_verification() {
    let tmp = tempfile::tempdir().unwrap();
    write_quadratic(tmp.path(), 16, 3, "f.csv");
    let out = run_in(
        tmp.path(),
        &["dft", "--group", "Z/16", "--verify", "--format", "csv", "f.csv"],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let rep = report(tmp.path(), "dft-report.json");
    assert_eq!(rep["results"]["coefficients"].as_array().unwrap().len(), 16);
    assert!(rep["results"]["round_trip_error"].as_f64().unwrap() < 1e-10);
    assert!((rep["results"]["energy"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let payload = fs::read_to_string(tmp.path().join("dft-report.json.csv")).unwrap();
    assert_eq!(payload.trim_end().lines().count(), 16);
}

#[test]
fn u2_inverse_finds_a_planted_character() {
    let tmp = tempfile::tempdir().unwrap();
    let rows: Vec<String> = (0..16u64)
        .map(|x| {
            let t = TAU * (5 * x % 16) as f64 / 16.0;
            format!("{},{}", t.cos(), t.sin())
        })
        .collect();
    fs::write(tmp.path().join("lin.csv"), rows.join("\n") + "\n").unwrap();
    let out = run_in(
        tmp.path(),
        &["u2-inverse", "--group", "Z/16", "--eta", "0.5", "--verify", "lin.csv"],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let rep = report(tmp.path(), "u2-inverse-report.json");
    assert_eq!(rep["results"]["frequency"], serde_json::json!([5]));
    assert!((rep["results"]["magnitude"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn bohr_reports_cardinality_and_flags_irregular_radii() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = run_in(
        tmp.path(),
        &["bohr", "--group", "Z/16", "--freqs", "1", "--rho", "1/5", "--verify"],
    );
    assert_eq!(code(&ok), 0, "stderr: {}", stderr(&ok));
    let rep = report(tmp.path(), "bohr-report.json");
    assert_eq!(rep["results"]["cardinality"], 7);
    assert_eq!(rep["results"]["regular"], true);
    assert_eq!(rep["results"]["recounted"], 7);

    // rho = 1/8 on Z/8 sits exactly on the seminorm of x = 1, where the
    // membership count jumps; the radius is irregular and the run is flagged.
    let flagged = run_in(
        tmp.path(),
        &[
            "bohr", "--group", "Z/8", "--freqs", "1", "--rho", "1/8", "--output",
            "irregular.json",
        ],
    );
    assert_eq!(code(&flagged), 2, "stderr: {}", stderr(&flagged));
    let rep = report(tmp.path(), "irregular.json");
    assert_eq!(rep["results"]["regular"], false);
    assert!(rep["results"]["witness"].is_object());
}

#[test]
fn lift_reports_rank_and_verifies_the_kernel() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &["lift", "--group", "Z/16", "--freqs", "1", "--verify"],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let rep = report(tmp.path(), "lift-report.json");
    assert_eq!(rep["results"]["rank"], 1);
    assert_eq!(rep["results"]["kernel_size"], 1);
}

#[test]
fn integrate_solves_the_cocycle_identity_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    // Rank-one form B(x, y) = cent(x) cent(y) / 4 tabulated on
    // Bohr({1}, 1/4) = {0, 1, 7} in Z/8; the integral is x^2 / 8.
    let doc = serde_json::json!({
        "freqs": [[1]],
        "rho": "1/4",
        "table": [
            ["0/1", "0/1", "0/1"],
            ["0/1", "1/4", "3/4"],
            ["0/1", "3/4", "1/4"],
        ],
    });
    fs::write(tmp.path().join("form.json"), doc.to_string()).unwrap();
    let out = run_in(
        tmp.path(),
        &["integrate", "--group", "Z/8", "--verify", "form.json"],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let rep = report(tmp.path(), "integrate-report.json");
    let phi: Vec<String> = rep["results"]["phi"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert_eq!(phi, ["0/1", "1/8", "1/2", "1/8", "0/1", "1/8", "1/2", "1/8"]);
    assert_eq!(rep["results"]["cocycle_pairs_checked"], 64);
}

#[test]
fn u3_inverse_recovers_a_planted_quadratic() {
    let tmp = tempfile::tempdir().unwrap();
    write_quadratic(tmp.path(), 16, 3, "f.csv");
    let out = run_in(
        tmp.path(),
        &["u3-inverse", "--group", "Z/16", "--eta", "0.9", "--verify", "f.csv"],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let rep = report(tmp.path(), "u3-inverse-report.json");
    assert!(rep["results"]["correlation"].as_f64().unwrap() > 0.99);
    assert_eq!(rep["results"]["below_floor"], false);
    assert!(rep["results"]["recomputed_correlation"].is_number());
    // Timings are stripped so reports stay reproducible.
    assert_eq!(rep["results"]["diagnostics"]["timings"], serde_json::json!([]));
}

#[test]
fn correlation_floor_flags_the_run_without_failing_it() {
    let tmp = tempfile::tempdir().unwrap();
    write_quadratic(tmp.path(), 16, 3, "f.csv");
    let out = run_in(
        tmp.path(),
        &[
            "u3-inverse", "--group", "Z/16", "--eta", "0.9", "--floor", "1.5", "f.csv",
        ],
    );
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    let rep = report(tmp.path(), "u3-inverse-report.json");
    assert_eq!(rep["results"]["below_floor"], true);
    let headline = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(headline.contains("[flagged]"), "stdout: {headline}");
}

#[test]
fn identical_configurations_give_byte_identical_reports() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let args = [
        "u3-inverse", "--group", "Z/16", "--eta", "0.9", "--encode", "--output",
        "report.json", "f.csv",
    ];
    for dir in [first.path(), second.path()] {
        write_quadratic(dir, 16, 3, "f.csv");
        let out = run_in(dir, &args);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    let a = fs::read(first.path().join("report.json")).unwrap();
    let b = fs::read(second.path().join("report.json")).unwrap();
    assert_eq!(a, b, "reports differ between identical runs");
}

#[test]
fn encode_chains_into_nilseq_eval() {
    let tmp = tempfile::tempdir().unwrap();
    write_quadratic(tmp.path(), 16, 3, "f.csv");
    let enc = run_in(
        tmp.path(),
        &["u3-inverse", "--group", "Z/16", "--eta", "0.9", "--encode", "--verify", "f.csv"],
    );
    assert_eq!(code(&enc), 0, "stderr: {}", stderr(&enc));
    // The full report doubles as a nilsequence spec input.
    let one = run_in(
        tmp.path(),
        &["nilseq-eval", "--at", "3", "--verify", "u3-inverse-report.json"],
    );
    assert_eq!(code(&one), 0, "stderr: {}", stderr(&one));
    let all = run_in(
        tmp.path(),
        &[
            "nilseq-eval", "--format", "csv", "--output", "vals.json",
            "u3-inverse-report.json",
        ],
    );
    assert_eq!(code(&all), 0, "stderr: {}", stderr(&all));
    let rep = report(tmp.path(), "vals.json");
    assert_eq!(rep["results"]["values"].as_array().unwrap().len(), 16);
    let payload = fs::read_to_string(tmp.path().join("vals.json.csv")).unwrap();
    assert_eq!(payload.trim_end().lines().count(), 16);
}

#[test]
fn hk_closure_agrees_with_parallelepipeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["hk", "--group", "Z/6", "--k", "2", "--verify"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let rep = report(tmp.path(), "hk-report.json");
    assert_eq!(rep["results"]["size"], 216);
    assert_eq!(rep["results"]["truncated"], false);
}

#[test]
fn polycheck_certifies_and_refutes_degrees() {
    let tmp = tempfile::tempdir().unwrap();
    let rows: Vec<String> = (0..16u64).map(|x| format!("{}/16", (3 * x * x) % 16)).collect();
    fs::write(tmp.path().join("phases.csv"), rows.join("\n") + "\n").unwrap();
    let yes = run_in(
        tmp.path(),
        &["polycheck", "--group", "Z/16", "--degree", "2", "--verify", "phases.csv"],
    );
    assert_eq!(code(&yes), 0, "stderr: {}", stderr(&yes));
    let rep = report(tmp.path(), "polycheck-report.json");
    assert_eq!(rep["results"]["polynomial"], true);

    // The same phase is not linear; the refutation carries a witness tuple.
    let no = run_in(
        tmp.path(),
        &[
            "polycheck", "--group", "Z/16", "--degree", "1", "--output", "deg1.json",
            "phases.csv",
        ],
    );
    assert_eq!(code(&no), 2, "stderr: {}", stderr(&no));
    let rep = report(tmp.path(), "deg1.json");
    assert_eq!(rep["results"]["polynomial"], false);
    assert!(rep["results"]["witness"].is_object());
}

#[test]
fn repair_restores_a_sparsely_corrupted_homomorphism() {
    let tmp = tempfile::tempdir().unwrap();
    let mut vals: Vec<u64> = (0..16).map(|x| (2 * x) % 16).collect();
    vals[3] = 7;
    let rows: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
    fs::write(tmp.path().join("hom.csv"), rows.join("\n") + "\n").unwrap();
    let out = run_in(
        tmp.path(),
        &["repair", "--group", "Z/16", "--target", "Z/16", "--verify", "hom.csv"],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let rep = report(tmp.path(), "repair-report.json");
    assert_eq!(rep["results"]["output_defect"], 0.0);
    assert_eq!(rep["results"]["changed"], 1);
}

#[test]
fn cocycle_trivializes_an_exact_coboundary() {
    let tmp = tempfile::tempdir().unwrap();
    let n = 8usize;
    let f: Vec<f64> = (0..n).map(|x| (x * x) as f64 / 31.0).collect();
    let rows: Vec<String> = (0..n)
        .flat_map(|h| {
            let f = &f;
            (0..n).map(move |k| format!("{},{},{}", h, k, f[(h + k) % n] - f[h] - f[k]))
        })
        .collect();
    fs::write(tmp.path().join("coc.csv"), rows.join("\n") + "\n").unwrap();
    let out = run_in(
        tmp.path(),
        &["cocycle", "--group", "Z/8", "--tol", "1e-8", "--verify", "coc.csv"],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let rep = report(tmp.path(), "cocycle-report.json");
    assert!(rep["results"]["residual"].as_f64().unwrap() < 1e-10);
}

#[test]
fn sim_emits_a_decreasing_gap_trend_as_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &[
            "sim", "--group", "Z/101", "--j", "8", "--seed", "0", "--seeds", "3",
            "--freq", "1", "--n-lo", "2", "--n-hi", "3", "--samples", "1024",
            "--format", "csv", "--verify",
        ],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let rep = report(tmp.path(), "sim-report.json");
    let trend = rep["results"]["trend"].as_array().unwrap();
    assert_eq!(trend.len(), 2);
    let g2 = trend[0]["median_gap"].as_f64().unwrap();
    let g3 = trend[1]["median_gap"].as_f64().unwrap();
    assert!(g3 < g2, "gap should shrink with the box: {g2} vs {g3}");
    let payload = fs::read_to_string(tmp.path().join("sim-report.json.csv")).unwrap();
    assert!(payload.starts_with("n,median_gap"));
}
