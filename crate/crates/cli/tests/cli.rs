use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
grid.n_points = 1024
grid.y_max = 40
datum.family = exponential
datum.a = 8
datum.b = 2
integrator.dt = 0.002
integrator.t_end = 3
integrator.snapshot_stride = 50
norms = -1:1, 1:0.8
fit.t_lo = 0.5
fit.t_hi = 3
fourier.mu_max = 5
fourier.times = 0.5, 1
moments.nu_fractions = 0.5
gap.corpus_size = 6
inequalities.corpus_size = 6
";

fn coaglab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coaglab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_exits_two() {
    let o = coaglab(&["simulate", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/run.cfg"));
    assert_eq!(coaglab(&["simulate"]).status.code(), Some(2));
}

#[test]
fn bad_config_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "grid.n_points = 1024\n# comment\ngrid.wobble = 3\n");
    let o = coaglab(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3") && stderr(&o).contains("grid.wobble"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "integrator.dt = fast\n");
    let o = coaglab(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = coaglab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["observables.csv", "rates.csv", "summary.txt", "snapshots/t_0.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let obs = fs::read_to_string(out.join("observables.csv")).unwrap();
    assert!(obs.starts_with("t,"));
    let row: Vec<&str> = obs.lines().nth(1).unwrap().split(',').collect();
    assert!(row.iter().all(|v| v.parse::<f64>().is_ok()));
    assert!(row[1].contains("e0") && row[1].len() >= 20, "{}", row[1]);
}

#[test]
fn failed_check_exits_one_and_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("moments.nu_fractions = 0.5", "moments.nu_fractions = 0.9"));
    let out = dir.path().join("out");
    let o = coaglab(&["moments", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("plateau_nu0.9"), "{}", stderr(&o));
    assert!(out.join("summary.txt").is_file());
}

#[test]
fn runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let o = coaglab(&["all", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", jobs, "--seed", "7"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        out
    };
    let (a, b) = (run("a", "1"), run("b", "3"));
    for f in [
        "simulate/observables.csv",
        "simulate/rates.csv",
        "fourier/fourier.csv",
        "gap/gap.csv",
        "inequalities/observables.csv",
        "summary.txt",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn seed_flag_changes_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let gap = |seed: &str| {
        let out = dir.path().join(format!("g{seed}"));
        let o = coaglab(&["gap", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read_to_string(out.join("gap.csv")).unwrap()
    };
    assert_ne!(gap("1"), gap("2"));
}
