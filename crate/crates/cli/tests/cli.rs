use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn example() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../problems/worked_example.json")
}

fn qdde(args: &[&str], problem: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdde"))
        .args(args)
        .arg("--problem")
        .arg(problem)
        .arg("--out")
        .arg(out)
        .output()
        .expect("qdde runs")
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn check_reports_failing_pair_with_exit_2() {
    let out = tempfile::tempdir().unwrap();
    let o = qdde(&["check", "--set", "terms.0.m1=0"], &example(), out.path());
    assert_eq!(o.status.code(), Some(2));
    let r = report(out.path());
    assert_eq!(r["assumptions"]["failing_a"], serde_json::json!([[0, 0]]));
    assert_eq!(r["exit_code"], 2);
}

#[test]
fn check_passes_on_the_example() {
    let out = tempfile::tempdir().unwrap();
    let o = qdde(&["check"], &example(), out.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(out.path())["assumptions"]["a_ok"], true);
}

#[test]
fn evaluate_at_z_zero_returns_initial_datum() {
    let out = tempfile::tempdir().unwrap();
    let o = qdde(&["evaluate", "--t", "0.05", "--z", "0"], &example(), out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = &report(out.path())["evaluate"]["value"];
    let (re, im) = (v[0].as_f64().unwrap(), v[1].as_f64().unwrap());
    assert!((re - 1.0).abs() <= 1e-8 && im.abs() <= 1e-8, "{re} {im}");
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("X("));
}

#[test]
fn evaluate_outside_domain_is_an_error() {
    let out = tempfile::tempdir().unwrap();
    let o = qdde(&["evaluate", "--t", "-0.25,0"], &example(), out.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("outside the spiral domain"));
}

#[test]
fn invalid_problem_exits_1_with_field_name() {
    let out = tempfile::tempdir().unwrap();
    let o = qdde(&["check", "--set", "r2=0"], &example(), out.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("r2 ≥ 1"));
    let o = qdde(&["check"], Path::new("/nonexistent/problem.json"), out.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn json_format_writes_tables_as_json() {
    let out = tempfile::tempdir().unwrap();
    let o = qdde(&["solve-formal", "--format", "json"], &example(), out.path());
    assert_eq!(o.status.code(), Some(0));
    let t: serde_json::Value = serde_json::from_slice(&std::fs::read(out.path().join("formal.json")).unwrap()).unwrap();
    assert_eq!(t["columns"], serde_json::json!(["m", "h", "re", "im"]));
    let row = t["rows"].as_array().unwrap().iter().find(|r| r[0] == 2 && r[1] == 1).unwrap();
    assert_eq!(row[2].as_f64(), Some(2.0));
    assert!(!out.path().join("formal.csv").exists());
}

#[test]
fn thread_count_does_not_change_tables() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let run = |dir: &Path, threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_qdde"))
            .env("QDDE_THREADS", threads)
            .args(["asymptotics", "--problem"])
            .arg(example())
            .arg("--out")
            .arg(dir)
            .output()
            .unwrap()
    };
    assert_eq!(run(a.path(), "1").status.code(), Some(0));
    assert_eq!(run(b.path(), "4").status.code(), Some(0));
    assert_eq!(std::fs::read(a.path().join("remainder.csv")).unwrap(), std::fs::read(b.path().join("remainder.csv")).unwrap());
    let bad = run(a.path(), "zero");
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn csv_files_use_lf_and_header() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(qdde(&["spiral"], &example(), out.path()).status.code(), Some(0));
    let text = std::fs::read_to_string(out.path().join("spiral.csv")).unwrap();
    assert!(text.starts_with("x_index,l,h,re,im\n"));
    assert!(!text.contains('\r'));
    assert_eq!(report(out.path())["checks"]["growth_certificate"], true);
}
