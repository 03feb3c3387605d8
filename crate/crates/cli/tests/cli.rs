use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lqnash(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lqnash"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_g1(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("g1.json");
    let o = lqnash(&["generate", "--scalar-preset", "g1", "--out", p(&path)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    path
}

fn edit_instance(src: &Path, dst: &Path, edit: impl FnOnce(&mut Value)) {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(src).unwrap()).unwrap();
    edit(&mut v);
    fs::write(dst, serde_json::to_string(&v).unwrap()).unwrap();
}

#[test]
fn g1_preset_has_expected_entries() {
    let dir = tempfile::tempdir().unwrap();
    let v: Value = serde_json::from_str(&fs::read_to_string(write_g1(dir.path())).unwrap()).unwrap();
    for (k, want) in [("A", 1.2), ("B1", 1.0), ("B2", 0.5), ("Q", 1.0), ("R1", 1.0), ("R2", 5.0), ("Sigma", 1.0)] {
        assert_eq!(v[k][0][0].as_f64(), Some(want), "{k}");
    }
    assert_eq!(v["v"], 1);
}

#[test]
fn solve_g1_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_g1(dir.path());
    let out = dir.path().join("out");
    let o = lqnash(&["solve", p(&inst), "--out-dir", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("j,cost,ng_norm,eta,rho,lambda_min_O,wall_ms"));
    let rows = lines.count();
    assert!((1..=8).contains(&rows), "{rows} rows");

    let sol: Value = serde_json::from_str(&fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["certificate"]["pass"], true);
    // Positive root of 4.75 x^2 - 6.95 x - 5 = 0.
    let x_star = (6.95 + (6.95f64.powi(2) + 4.0 * 4.75 * 5.0).sqrt()) / (2.0 * 4.75);
    assert!((sol["X_star"][0][0].as_f64().unwrap() - x_star).abs() < 1e-9);
}

#[test]
fn solve_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    assert_eq!(
        code(&lqnash(&["generate", "--n", "3", "--m1", "2", "--m2", "1", "--seed", "3", "--out", p(&inst)])),
        0
    );
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = lqnash(&["solve", p(&inst), "--out-dir", p(&out), "--no-timing", "--seed", "11"]);
        (
            code(&o),
            fs::read(out.join("solution.json")).unwrap(),
            fs::read(out.join("trace.csv")).unwrap(),
        )
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
}

#[test]
fn generate_is_byte_identical() {
    let a = lqnash(&["generate", "--n", "4", "--seed", "7"]);
    let b = lqnash(&["generate", "--n", "4", "--seed", "7"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let c = lqnash(&["generate", "--n", "4", "--seed", "8"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn generate_round_trips_through_the_parser() {
    let o = lqnash(&["generate", "--n", "5", "--m1", "3", "--m2", "2", "--seed", "21"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let g = lqnash::io::parse_instance(&text).unwrap();
    assert_eq!(lqnash::io::instance_json(&g), text);
}

#[test]
fn indefinite_flag_gives_indefinite_weight() {
    use lqnash_core::generate::effective_weight_min_eig;
    use lqnash_core::outer::{qn_outer, SolverConfig};

    let o = lqnash(&["generate", "--n", "3", "--seed", "1", "--indefinite-at-ne"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let g = lqnash::io::parse_instance(std::str::from_utf8(&o.stdout).unwrap()).unwrap();
    let sol = qn_outer(&g, &lqnash_core::linalg::Matrix::zeros(g.m2(), g.n()), &SolverConfig::default()).unwrap();
    assert!(sol.certificate.pass);
    assert!(effective_weight_min_eig(&g, &sol.l_star) < 0.0);
}

#[test]
fn non_positive_r1_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_g1(dir.path());
    let bad = dir.path().join("bad.json");
    edit_instance(&inst, &bad, |v| v["R1"] = serde_json::json!([[0.0]]));
    let o = lqnash(&["solve", p(&bad), "--out-dir", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("R1"));
}

#[test]
fn unknown_field_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_g1(dir.path());
    let bad = dir.path().join("bad.json");
    edit_instance(&inst, &bad, |v| v["Rx"] = serde_json::json!(1));
    assert_eq!(code(&lqnash(&["solve", p(&bad)])), 2);
}

#[test]
fn unstabilizable_instance_is_an_init_error() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_g1(dir.path());
    let bad = dir.path().join("unstab.json");
    edit_instance(&inst, &bad, |v| {
        v["A"] = serde_json::json!([[2.0]]);
        v["B1"] = serde_json::json!([[0.0]]);
        v["B2"] = serde_json::json!([[0.0]]);
    });
    let o = lqnash(&["solve", p(&bad), "--out-dir", p(dir.path())]);
    assert_eq!(code(&o), 3);
}

#[test]
fn invalid_leader_start_is_an_init_error() {
    // K0 = 0 does not stabilize A = 1.2 against the maximizer's best response.
    let dir = tempfile::tempdir().unwrap();
    let inst = write_g1(dir.path());
    let o = lqnash(&["solve", p(&inst), "--method", "ng", "--leader", "K", "--out-dir", p(dir.path())]);
    assert_eq!(code(&o), 3);
}

#[test]
fn qn_with_k_leader_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_g1(dir.path());
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"method": "qn", "leader": "K"}"#).unwrap();
    assert_eq!(code(&lqnash(&["solve", p(&inst), "--config", p(&cfg)])), 2);
}

#[test]
fn round_cap_writes_trace_and_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_g1(dir.path());
    let out = dir.path().join("out");
    let o = lqnash(&["solve", p(&inst), "--max-outer", "1", "--out-dir", p(&out)]);
    assert_eq!(code(&o), 4);
    assert!(fs::read_to_string(out.join("trace.csv")).unwrap().lines().count() > 1);
    assert!(!out.join("solution.json").exists());
}

#[test]
fn verify_certifies_solver_output_and_rejects_zero_policy() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_g1(dir.path());
    let out = dir.path().join("out");
    assert_eq!(code(&lqnash(&["solve", p(&inst), "--out-dir", p(&out)])), 0);
    let sol: Value = serde_json::from_str(&fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    let pol = dir.path().join("pol.json");
    fs::write(&pol, serde_json::json!({"v": 1, "K": sol["K_star"], "L": sol["L_star"]}).to_string()).unwrap();
    let o = lqnash(&["verify", p(&inst), p(&pol)]);
    assert_eq!(code(&o), 0);
    let cert: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cert["pass"], true);

    // A = 1.2 with no feedback is unstable.
    fs::write(&pol, r#"{"v": 1, "K": [[0.0]], "L": [[0.0]]}"#).unwrap();
    let o = lqnash(&["verify", p(&inst), p(&pol)]);
    assert_eq!(code(&o), 4);
    let cert: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cert["pass"], false);
}

#[test]
fn rates_on_g1() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_g1(dir.path());
    let csv = dir.path().join("rates.csv");
    let o = lqnash(&["rates", p(&inst), "--methods", "ng,qn", "--tol", "1e-10", "--out", p(&csv)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary[0]["method"], "ng");
    assert_eq!(summary[0]["linear"], true);
    assert_eq!(summary[1]["method"], "qn");
    assert_eq!(summary[1]["quadratic"], true);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("method,j,cost,error,ng_norm\n"));
    assert!(text.lines().any(|l| l.starts_with("qn,0,")));
}

#[test]
fn rates_non_converged_fields_are_null() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_g1(dir.path());
    let csv = dir.path().join("rates.csv");
    let o = lqnash(&["rates", p(&inst), "--methods", "qn", "--max-outer", "1", "--out", p(&csv)]);
    assert_eq!(code(&o), 4);
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    for f in ["tail_slope", "linear", "quadratic_q", "quadratic"] {
        assert!(summary[0][f].is_null(), "{f}");
    }
}
