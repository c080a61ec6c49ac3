use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_boundary-solver"))
}

fn spec(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../specs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn tmp_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("boundary-solver-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn write_spec(tag: &str, body: &str) -> PathBuf {
    let d = tmp_dir(tag);
    std::fs::create_dir_all(&d).unwrap();
    let p = d.join("spec.toml");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn solve_example1() {
    let o = run(&["solve", "--spec", spec("example1.toml").to_str().unwrap(), "--x", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("M (argmax g/psi) = {6, 14}"), "{s}");
    assert!(s.contains("V = 0.08333333 * psi on (0, 14]"), "{s}");
    assert!(s.contains("value at 3: 0.75"), "{s}");
}

#[test]
fn solve_writes_artifacts_that_revalidate() {
    let out = tmp_dir("artifacts");
    let path = spec("example2.toml");
    let o = run(&["solve", "--spec", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--rows", "300"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("solution.csv")).unwrap();
    assert!(csv.starts_with("x,g,V,g_over_psi,g_over_phi,region\n"));
    assert!(csv.lines().count() > 300);
    let text = std::fs::read_to_string(&path).unwrap();
    let p = boundary_core::problem::parse_spec(&text).unwrap();
    let sol = boundary_core::report::solve_problem(&p, Default::default()).unwrap();
    let worst = boundary_core::report::revalidate_csv(&csv, &sol).unwrap();
    assert!(worst <= 1e-12, "{worst}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["mode"], "stopping");
    assert_eq!(json["solution"]["y_star"], "inf");
    assert!(std::fs::read_to_string(out.join("report.txt")).unwrap().contains("plateau"));
}

#[test]
fn validation_errors_exit_2() {
    let empty = write_spec(
        "empty",
        "[diffusion]\nfamily = \"gbm\"\nmu = 0.1\nsigma = 0.2\ndiscount = 0.24\n\n[payoff]\npieces = []\n",
    );
    let o = run(&["solve", "--spec", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no pieces"), "{}", stderr(&o));

    let bad = write_spec(
        "parse",
        "[diffusion]\nfamily = \"gbm\"\nmu = 0.1\nsigma = 0.2\ndiscount = 0.24\n\n[[payoff.pieces]]\ninterval = \"(0, inf)\"\nexpr = \"x +* 2\"\n",
    );
    let o = run(&["solve", "--spec", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("parse error at 9:"), "{}", stderr(&o));

    let o = run(&["solve", "--spec", "/nonexistent/spec.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["reproduce", "--example", "12"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["solve", "--spec", spec("example1.toml").to_str().unwrap(), "--tol", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["solve"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_3() {
    // A horizon far too short truncates nearly every path.
    let p = write_spec(
        "horizon",
        &(std::fs::read_to_string(spec("example1.toml")).unwrap() + "\n[mc]\nhorizon = 0.01\n"),
    );
    let o = run(&["verify-mc", "--spec", p.to_str().unwrap(), "--x", "10", "--paths", "200", "--step", "0.001"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn verify_mc_example9() {
    let o = run(&[
        "verify-mc",
        "--spec",
        spec("example9.toml").to_str().unwrap(),
        "--x",
        "16",
        "--paths",
        "2000",
        "--step",
        "0.01",
        "--seed",
        "7",
    ]);
    let s = stdout(&o);
    assert!(s.contains("reflect downward at 25: analytic 256"), "{s}");
    assert!(s.contains("impulse at 25 of size 9: analytic 256"), "{s}");
    assert_eq!(o.status.code(), Some(0), "{s}{}", stderr(&o));
}

#[test]
fn thread_count_does_not_change_results() {
    let path = spec("example1.toml");
    let args = [
        "verify-mc",
        "--spec",
        path.to_str().unwrap(),
        "--x",
        "10",
        "--paths",
        "1000",
        "--step",
        "0.01",
    ];
    let a = bin().args(args).env("BOUNDARY_SOLVER_THREADS", "1").output().unwrap();
    let b = bin().args(args).env("BOUNDARY_SOLVER_THREADS", "3").output().unwrap();
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn reproduce_example11() {
    let o = run(&["reproduce", "--example", "11"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("local link: true (split at 1)"), "{s}");
    assert!(!s.contains("[FAIL]"));
}

#[test]
fn reproduce_all_writes_specs() {
    let out = tmp_dir("reproduce");
    let o = run(&["reproduce", "--example", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for id in 1..=11 {
        let written = std::fs::read_to_string(out.join(format!("example{id}/example{id}.toml"))).unwrap();
        let shipped = std::fs::read_to_string(spec(&format!("example{id}.toml"))).unwrap();
        assert_eq!(written, shipped, "example {id}");
    }
}

#[test]
fn check_connection_example11() {
    let o = run(&[
        "check-connection",
        "--spec",
        spec("example11.toml").to_str().unwrap(),
        "--x",
        "1",
        "--level",
        "2",
        "--paths",
        "2000",
        "--step",
        "0.01",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("psi convex: true"), "{s}");
    assert!(s.contains("Laplace check from 1 to 2: analytic 0.5"), "{s}");
}

#[test]
fn sweep_csv() {
    let out = tmp_dir("sweep");
    let o = run(&[
        "sweep",
        "--spec",
        spec("example1.toml").to_str().unwrap(),
        "--param",
        "r",
        "--values",
        "0.2:0.3:3",
        "--x",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("r,sup_g_over_psi"));
    let o = run(&["sweep", "--spec", spec("example1.toml").to_str().unwrap(), "--param", "kappa", "--values", "1"]);
    assert_eq!(o.status.code(), Some(2));
}
