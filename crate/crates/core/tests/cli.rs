use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_pslab");

fn config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const SWEEP: &str = r#"
seed = 5
replications = 4000
epsilons = [0.05, 0.1, 0.15]

[queue]
lambda = 0.5
mu = 1.0

[environment]
generator = [[-1.0, 1.0], [1.0, -1.0]]
p = [0.0, 2.0]
"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn run_in(dir: &Path, sub: &str, cfg: &Path, out: &str, extra: &[&str]) -> Output {
    let out = dir.join(out);
    let mut a = vec![sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    a.extend_from_slice(extra);
    run(&a)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn sweep_csv_has_header_and_exact_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "s.toml", SWEEP);
    let o = run_in(dir.path(), "eps-sweep", &cfg, "s.csv", &[]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let mut lines = text.lines();
    let head = lines.next().unwrap();
    assert!(head.starts_with("# pslab "), "{head}");
    for key in ["experiment=eps-sweep", "config_sha256=", "seed=5", "replications=4000"] {
        assert!(head.contains(key), "{head}");
    }
    assert_eq!(
        lines.next().unwrap(),
        "epsilon,e_area,se_area,e_busy,se_busy,e_bitrate,se_bitrate,rsr_bitrate,expansion_bitrate"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("0,"));
    assert!(rows.iter().all(|r| r.split(',').count() == 9));
    assert!(dir.path().join("s.fits.csv").exists());
}

#[test]
fn output_is_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "s.toml", SWEEP);
    run_in(dir.path(), "eps-sweep", &cfg, "one.csv", &["--workers", "1"]);
    run_in(dir.path(), "eps-sweep", &cfg, "three.csv", &["--workers", "3"]);
    for suffix in ["csv", "fits.csv"] {
        let a = std::fs::read(dir.path().join(format!("one.{suffix}"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("three.{suffix}"))).unwrap();
        assert_eq!(a, b, "{suffix}");
    }
}

#[test]
fn seed_override_changes_results_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "s.toml", SWEEP);
    run_in(dir.path(), "eps-sweep", &cfg, "a.csv", &[]);
    run_in(dir.path(), "eps-sweep", &cfg, "b.csv", &["--seed", "6"]);
    let a = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert!(b.lines().next().unwrap().contains("seed=6"));
    assert_ne!(a.lines().nth(3), b.lines().nth(3));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "bad.toml", &SWEEP.replace("seed = 5", "seed = 5\nreplicashuns = 3"));
    let o = run_in(dir.path(), "eps-sweep", &cfg, "x.csv", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("ERROR\t"), "{}", stderr(&o));
    assert!(stderr(&o).contains("replicashuns"));
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn zero_replications_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "s.toml", SWEEP);
    let o = run_in(dir.path(), "eps-sweep", &cfg, "x.csv", &["--replications", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ERROR"));
}

#[test]
fn unstable_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "s.toml", &SWEEP.replace("0.15]", "0.3]"));
    let o = run_in(dir.path(), "eps-sweep", &cfg, "x.csv", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stab"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_an_error() {
    let o = run(&["coeffs", "--config", "/nonexistent/pslab.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn baseline_passes_and_reports_gates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "b.toml",
        "seed = 3\nreplications = 20000\n[queue]\nlambda = 0.5\nmu = 1.0\n[environment]\ngenerator = [[0.0]]\np = [1.0]\n",
    );
    let o = run_in(dir.path(), "validate-baseline", &cfg, "b.csv", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().any(|l| l.starts_with("PASS ")));
    assert!(!out.contains("FAIL"));
}

#[test]
fn failing_gate_exits_one_with_fail_lines() {
    let dir = tempfile::tempdir().unwrap();
    // a vanishing z bound fails every stochastic gate
    let cfg = config(
        dir.path(),
        "c.toml",
        "seed = 3\nreplications = 20000\nmethod = \"mc_joint\"\n[queue]\nlambda = 0.5\nmu = 1.0\n[environment]\ngenerator = [[0.0]]\np = [1.0]\n[gates]\nz = 1e-9\n",
    );
    let o = run_in(dir.path(), "coeffs", &cfg, "c.csv", &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).lines().any(|l| l.starts_with("FAIL\t")));
    assert!(dir.path().join("c.csv").exists());
}

#[test]
fn trace_lists_events_of_first_replications() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "s.toml", SWEEP);
    let trace = dir.path().join("t.csv");
    run_in(dir.path(), "eps-sweep", &cfg, "s.csv", &["--trace", trace.to_str().unwrap()]);
    let t = std::fs::read_to_string(&trace).unwrap();
    assert!(t.lines().count() > 10);
}
