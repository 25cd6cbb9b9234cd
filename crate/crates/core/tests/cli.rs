use std::path::Path;
use std::process::{Command, Output};

use wldreg::data::read_matrix_csv;

fn wldreg(args: &[&str], output_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wldreg"));
    cmd.args(args).env_remove("WLDREG_OUTPUT_DIR");
    if let Some(dir) = output_dir {
        cmd.env("WLDREG_OUTPUT_DIR", dir);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const SMALL: &str = r#"{
    "dataset": {"source": "two_moons", "n": 120},
    "model": {"hidden": [6, 6], "activation": "tanh"},
    "optimizer": {"epochs": 2, "batch_size": 16},
    "regularizers": ["none", "logdet"],
    "seeds": [0, 1],
    "output": "out/results.csv",
    "grid": {"lambda1": [0.001, 0.01]}
}"#;

#[test]
fn gradcheck_passes_and_fails_by_exit_code() {
    let ok = wldreg(&["gradcheck", "--tol", "1e-5"], None);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("all components passed"));
    assert_eq!(stdout(&ok).matches("PASS").count(), 12);

    // tighter than floating-point FD can deliver
    let strict = wldreg(&["gradcheck", "--tol", "1e-14", "--only", "direct,network-none"], None);
    assert_eq!(strict.status.code(), Some(1));
    assert!(stdout(&strict).contains("FAIL"));

    let none = wldreg(&["gradcheck", "--tol", "1e-300", "--only", "none"], None);
    assert!(none.status.success());
}

#[test]
fn run_writes_relative_output_under_override_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("redirected");
    let o = wldreg(&["run", &cfg], Some(&out_dir));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(stdout(&o).contains("logdet"));
}

#[test]
fn sweep_then_resume_appends_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let first = wldreg(&["sweep", &cfg], Some(dir.path()));
    assert!(first.status.success(), "{}", stderr(&first));
    // none ignores lambda1: 1 point; logdet: 2 points; 2 seeds each
    assert!(stdout(&first).contains("appended 6 rows"));
    let second = wldreg(&["sweep", &cfg], Some(dir.path()));
    assert!(stdout(&second).contains("appended 0 rows"));
    let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn dump_sim_writes_readable_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("s.csv");
    let o = wldreg(&["dump-sim", &cfg, "--out", out.to_str().unwrap()], Some(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# det="));
    let s = read_matrix_csv(&out).unwrap();
    assert_eq!(s.shape(), (6, 6));
    for i in 0..6 {
        assert_eq!(s[(i, i)], 1.0);
    }
}

#[test]
fn config_errors_exit_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"dataset": {"source": "two_moons"}, "model": {"hidden": [4]},
            "regularizers": [{"variant": "direct", "lambda1": -1}]}"#,
    );
    let o = wldreg(&["run", &cfg], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("regularizers[0].lambda1"), "{}", stderr(&o));

    let cfg = write_config(
        dir.path(),
        r#"{"dataset": {"source": "two_moons"}, "model": {"hidden": [4]}, "regularizers": ["logdte"]}"#,
    );
    let o = wldreg(&["run", &cfg], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("logdte"));
}
