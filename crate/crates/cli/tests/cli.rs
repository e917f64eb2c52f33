//! End-to-end tests of the command-line interface: exit codes, error
//! surfacing, file round trips, and byte determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_matchkit"))
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

fn symmetric_market(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("m.json");
    write(
        &path,
        r#"{"x_types":["a"],"y_types":["b"],"n":[1.0],"m":[1.0],"phi":[[0.0]]}"#,
    );
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn solve_symmetric_market() {
    let dir = tempfile::tempdir().unwrap();
    let market = symmetric_market(dir.path());
    let out = dir.path().join("eq.json");
    let output = run(bin()
        .args(["solve", "--market"])
        .arg(&market)
        .arg("--het")
        .arg("logit")
        .arg("--out")
        .arg(&out));
    assert!(output.status.success(), "{output:?}");
    let eq: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let mu = eq["mu"][0][0].as_f64().unwrap();
    assert!((mu - 0.5).abs() < 1e-9);
}

#[test]
fn identify_zero_cell_without_laplace_fails_with_code() {
    let dir = tempfile::tempdir().unwrap();
    let market = symmetric_market(dir.path());
    let matching = dir.path().join("mu.csv");
    write(&matching, "x,y,mu\na,b,0.0\na,0,1.0\n0,b,1.0\n");
    let output = run(bin()
        .args(["identify", "--market"])
        .arg(&market)
        .arg("--matching")
        .arg(&matching));
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("BOUNDARY_SHARES"), "stderr: {stderr}");
}

#[test]
fn identify_zero_cell_with_laplace_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let market = symmetric_market(dir.path());
    let matching = dir.path().join("mu.csv");
    write(&matching, "x,y,mu\na,b,0.0\na,0,1.0\n0,b,1.0\n");
    let out = dir.path().join("id.json");
    let output = run(bin()
        .args(["identify", "--market"])
        .arg(&market)
        .arg("--matching")
        .arg(&matching)
        .args(["--laplace", "1e-4", "--out"])
        .arg(&out));
    assert!(output.status.success(), "{output:?}");
    assert!(out.exists());
}

#[test]
fn missing_input_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(bin()
        .args(["solve", "--market"])
        .arg(dir.path().join("absent.json"))
        .arg("--out")
        .arg(dir.path().join("eq.json")));
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("IO_ERROR"), "stderr: {stderr}");
}

#[test]
fn non_positive_mass_is_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let market = dir.path().join("bad.json");
    write(
        &market,
        r#"{"x_types":["a"],"y_types":["b"],"n":[0.0],"m":[1.0],"phi":[[0.0]]}"#,
    );
    let output = run(bin()
        .args(["solve", "--market"])
        .arg(&market)
        .arg("--out")
        .arg(dir.path().join("eq.json")));
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("NON_POSITIVE_MASS"), "stderr: {stderr}");
}

#[test]
fn outputs_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let market = dir.path().join("m.json");
    write(
        &market,
        r#"{"x_types":["a","b"],"y_types":["c","d"],"n":[1.0,0.8],"m":[0.9,1.1],"phi":[[1.0,0.0],[0.0,1.0]]}"#,
    );
    let run_solve = |out: &Path| {
        let output = run(bin()
            .args(["solve", "--market"])
            .arg(&market)
            .arg("--out")
            .arg(out));
        assert!(output.status.success());
        std::fs::read(out).unwrap()
    };
    assert_eq!(
        run_solve(&dir.path().join("eq1.json")),
        run_solve(&dir.path().join("eq2.json"))
    );

    let run_sim = |out: &Path| {
        let output = run(bin()
            .args(["simulate", "--market"])
            .arg(&market)
            .args(["--scale", "200", "--seed", "7", "--out"])
            .arg(out));
        assert!(output.status.success());
        std::fs::read(out).unwrap()
    };
    assert_eq!(
        run_sim(&dir.path().join("s1.json")),
        run_sim(&dir.path().join("s2.json"))
    );
}

#[test]
fn thread_count_does_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let market = dir.path().join("m.json");
    write(
        &market,
        r#"{"x_types":["a","b"],"y_types":["c","d"],"n":[1.0,0.8],"m":[0.9,1.1],"phi":[[1.0,0.2],[0.1,1.0]]}"#,
    );
    let run_with = |threads: &str, out: &Path| {
        let output = run(bin()
            .env("MATCHKIT_THREADS", threads)
            .args(["solve", "--market"])
            .arg(&market)
            .arg("--out")
            .arg(out));
        assert!(output.status.success());
        std::fs::read(out).unwrap()
    };
    assert_eq!(
        run_with("1", &dir.path().join("t1.json")),
        run_with("4", &dir.path().join("t4.json"))
    );

    let output = run(bin()
        .env("MATCHKIT_THREADS", "zero")
        .args(["solve", "--market"])
        .arg(&market)
        .arg("--out")
        .arg(dir.path().join("x.json")));
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn solve_then_identify_round_trips_surplus() {
    let dir = tempfile::tempdir().unwrap();
    let market = dir.path().join("m.json");
    write(
        &market,
        r#"{"x_types":["a","b"],"y_types":["c","d"],"n":[1.0,0.8],"m":[0.9,1.1],"phi":[[1.0,-0.3],[0.2,0.7]]}"#,
    );
    let eq = dir.path().join("eq.json");
    let mu = dir.path().join("mu.csv");
    let output = run(bin()
        .args(["solve", "--market"])
        .arg(&market)
        .args(["--tolerance", "1e-12", "--out"])
        .arg(&eq)
        .arg("--out-matching")
        .arg(&mu));
    assert!(output.status.success());
    let id = dir.path().join("id.json");
    let output = run(bin()
        .args(["identify", "--market"])
        .arg(&market)
        .arg("--matching")
        .arg(&mu)
        .arg("--out")
        .arg(&id));
    assert!(output.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&id).unwrap()).unwrap();
    let truth = [[1.0, -0.3], [0.2, 0.7]];
    for (x, row) in truth.iter().enumerate() {
        for (y, expected) in row.iter().enumerate() {
            let got = report["phi"][x][y].as_f64().unwrap();
            assert!(
                (got - expected).abs() < 1e-8,
                "phi[{x}][{y}] = {got}, expected {expected}"
            );
        }
    }
}

#[test]
fn ipfp_solver_flag_and_not_logit_error() {
    let dir = tempfile::tempdir().unwrap();
    let market = symmetric_market(dir.path());
    let out = dir.path().join("eq.json");
    let output = run(bin()
        .args(["solve", "--market"])
        .arg(&market)
        .args(["--solver", "ipfp", "--out"])
        .arg(&out));
    assert!(output.status.success());
    let eq: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(eq["diagnostics"]["solver"], "ipfp");

    // Simulated heterogeneity cannot go through the IPFP path.
    let het = dir.path().join("sim.json");
    write(
        &het,
        r#"{"kind":"simulated","smoothing":0.05,"seed":1,"num_draws":50}"#,
    );
    let output = run(bin()
        .args(["solve", "--market"])
        .arg(&market)
        .arg("--het")
        .arg(&het)
        .args(["--solver", "ipfp", "--out"])
        .arg(dir.path().join("x.json")));
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("NOT_LOGIT"));
}

#[test]
fn onetype_identify_mode() {
    let output = run(bin().args([
        "onetype",
        "--n",
        "0.5",
        "--m",
        "1.0",
        "--mu",
        "0.3333333333333333",
    ]));
    assert!(output.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&output.stdout)).unwrap();
    assert!(report["phi"].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn selftest_prints_table_and_passes() {
    let output = run(bin().arg("selftest"));
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    let pass_lines = stdout.lines().filter(|l| l.starts_with("[PASS]")).count();
    assert_eq!(pass_lines, 11, "table:\n{stdout}");
    assert!(!stdout.contains("[FAIL]"));
}
