use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ipmforge::linalg::Matrix;
use ipmforge::lp::{random_instance, LpInstance, LpJson};
use serde_json::Value;
use tempfile::TempDir;

const UNIT1: &str = r#"{"A": [[1.0], [-1.0]], "b": [1.0, 1.0], "c": [1.0], "epsilon": 0.01}"#;
const MPC_SCALAR: &str = r#"{"A_dyn": [[0.5]], "B_dyn": [[1.0]], "x0": [0.0], "xN": [1.0], "N": 2, "u_bound": 2.0, "x_bound": 2.0, "epsilon": 0.01}"#;

fn ipmforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipmforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn write_lp(dir: &TempDir, name: &str, p: &LpInstance, x0: Option<&Matrix>) -> String {
    write(
        dir,
        name,
        &serde_json::to_string(&LpJson::from_instance(p, x0)).unwrap(),
    )
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn solve_unit_interval_reaches_lower_end() {
    let dir = TempDir::new().unwrap();
    let lp = write(&dir, "unit.json", UNIT1);
    let cert = dir.path().join("cert.json");
    let out = ipmforge(&["solve", &lp, "--x0", "0", "--out", path(&cert)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&cert);
    assert!((v["objective"].as_f64().unwrap() + 1.0).abs() <= 0.01);

    let checked = ipmforge(&["check", &lp, path(&cert)]);
    assert_eq!(code(&checked), 0, "{}", String::from_utf8_lossy(&checked.stdout));
}

#[test]
fn missing_start_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let lp = write(&dir, "unit.json", UNIT1);
    let out = ipmforge(&["solve", &lp]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("x0"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&ipmforge(&["solve", "--no-such-flag"])), 1);
}

#[test]
fn tampered_certificate_fails_verification() {
    let dir = TempDir::new().unwrap();
    let lp = write(&dir, "unit.json", UNIT1);
    let cert = dir.path().join("cert.json");
    assert_eq!(code(&ipmforge(&["solve", &lp, "--x0", "0.5", "--out", path(&cert)])), 0);
    let mut v = read_json(&cert);
    v["objective"] = Value::from(0.5);
    fs::write(&cert, v.to_string()).unwrap();
    let out = ipmforge(&["check", &lp, path(&cert)]);
    assert_eq!(code(&out), 2);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], Value::Bool(false));
}

#[test]
fn oversized_check_reports_guard() {
    let dir = TempDir::new().unwrap();
    let (p, w) = random_instance(9, 27, 3).unwrap();
    let lp = write_lp(&dir, "big.json", &p, Some(&w.x));
    let cert = dir.path().join("cert.json");
    let solved = ipmforge(&["solve", &lp, "--out", path(&cert)]);
    assert_eq!(code(&solved), 0, "{}", String::from_utf8_lossy(&solved.stderr));
    assert_eq!(code(&ipmforge(&["check", &lp, path(&cert)])), 3);
}

#[test]
fn monitor_mode_controls_exit_status() {
    let dir = TempDir::new().unwrap();
    let (p, w) = random_instance(2, 10, 0).unwrap();
    let lp = write_lp(&dir, "lp.json", &p, Some(&w.x));
    let strict = ipmforge(&["solve", &lp, "--nu", "1"]);
    assert_eq!(code(&strict), 2);
    let lenient = ipmforge(&["solve", &lp, "--nu", "1", "--monitor", "warn"]);
    assert_eq!(code(&lenient), 0, "{}", String::from_utf8_lossy(&lenient.stderr));
    let v: Value = serde_json::from_slice(&lenient.stdout).unwrap();
    assert!(v["monitor"]
        .as_array()
        .unwrap()
        .iter()
        .any(|r| r["pass"] == Value::Bool(false)));
}

#[test]
fn encode_is_deterministic_and_solvable() {
    let dir = TempDir::new().unwrap();
    let mpc = write(&dir, "mpc.json", MPC_SCALAR);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&ipmforge(&["encode", &mpc, "--out", path(&a)])), 0);
    assert_eq!(code(&ipmforge(&["encode", &mpc, "--out", path(&b)])), 0);
    for f in ["lp.json", "layout.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let lp = a.join("lp.json");
    let cert = dir.path().join("cert.json");
    let out = ipmforge(&["solve", path(&lp), "--out", path(&cert)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&ipmforge(&["check", path(&lp), path(&cert)])), 0);
}

#[test]
fn malformed_mpc_names_the_field() {
    let dir = TempDir::new().unwrap();
    let mpc = write(&dir, "bad.json", r#"{"A_dyn": [[1.0]], "B_dyn": "x"}"#);
    let out = ipmforge(&["encode", &mpc, "--out", path(&dir.path().join("o"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("B_dyn"));
}

#[test]
fn unreachable_target_has_no_witness() {
    let dir = TempDir::new().unwrap();
    let mpc = write(
        &dir,
        "far.json",
        r#"{"A_dyn": [[1.0]], "B_dyn": [[1.0]], "x0": [0.0], "xN": [10.0], "N": 2, "u_bound": 1.0, "x_bound": 20.0, "epsilon": 0.01}"#,
    );
    assert_eq!(
        code(&ipmforge(&["encode", &mpc, "--out", path(&dir.path().join("o"))])),
        2
    );
}

#[test]
fn gen_writes_parseable_artifacts() {
    let dir = TempDir::new().unwrap();
    let lp = write(&dir, "unit.json", UNIT1);
    let out_dir = dir.path().join("kernel");
    let out = ipmforge(&["gen", &lp, "--x0", "0", "--nu", "1", "--out", path(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["trip_count"], Value::from(111));

    let kernel =
        ipmforge::codegen::parse_kernel_json(&fs::read_to_string(out_dir.join("kernel.json")).unwrap()).unwrap();
    assert_eq!(kernel.sizes.trip_count, 111);
    let sidecar =
        ipmforge::codegen::parse_sidecar_json(&fs::read_to_string(out_dir.join("sidecar.json")).unwrap()).unwrap();
    assert_eq!(sidecar.lemmas.len(), 5);
    let c = fs::read_to_string(out_dir.join("solver.c")).unwrap();
    assert_eq!(c.matches("for (").count(), 1);
}

#[test]
fn bench_is_deterministic_apart_from_timing() {
    let run = || {
        let out = ipmforge(&[
            "bench",
            "--n-range",
            "2..=2",
            "--m-range",
            "6..8",
            "--count",
            "3",
            "--seed",
            "7",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let text = String::from_utf8(out.stdout).unwrap();
        text.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_owned())
            .collect::<Vec<_>>()
    };
    let first = run();
    assert_eq!(
        first[0],
        "n,m,seed,trip_count,t_final,gap_bound,oracle_gap,monitor_pass"
    );
    assert!(first.len() > 1);
    assert!(first[1..].iter().all(|l| l.ends_with(",true")));
    assert_eq!(first, run());
}
