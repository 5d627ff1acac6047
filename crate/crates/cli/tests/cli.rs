use std::fs::File;
use std::path::Path;
use std::process::{Command, Output};

use kvh_core::io::write_field;
use kvh_core::{PhaseGrid, ScalarField, C64};

fn kvh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kvh")).args(args).env_remove("KVH_OUTPUT_ROOT").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_hydro(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--scenario", "quantum-hydro", "--output", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    kvh(&args)
}

#[test]
fn lists_scenarios_and_checks() {
    let o = kvh(&["list-scenarios"]);
    assert!(o.status.success());
    for s in ["harmonic-kvh", "free-kvh", "quartic-kvh", "pendulum-kvh", "quarter-rotation", "von-neumann", "point-particle", "quantum-hydro"] {
        assert!(stdout(&o).contains(s), "{s}");
    }
    let o = kvh(&["list-checks"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("sigma-defect"));
}

#[test]
fn passing_run_writes_report_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("qh");
    let o = run_hydro(&out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report")).unwrap();
    assert!(report.ends_with("status = pass\n"));
    assert!(report.contains("bohm.residual = "));
    for f in ["config.toml", "psi.kvhf", "qhd.csv", "final_psi.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    // the written config reproduces the run byte for byte
    let again = dir.path().join("again");
    let cfg = out.join("config.toml");
    let o = kvh(&["run", "--config", cfg.to_str().unwrap(), "--output", again.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(out.join("psi.kvhf")).unwrap(), std::fs::read(again.join("psi.kvhf")).unwrap());
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_hydro(&dir.path().join("x"), &["--check", "bohm", "--set", "tolerances.bohm = 1e-30"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
    assert!(!stdout(&o).contains("continuity."));
}

#[test]
fn invalid_configs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    for extra in [&["--set", "dt = 0"][..], &["--set", "dt = -1e-3"], &["--set", "no_such_key = 1"], &["--check", "unitarity"]] {
        let o = run_hydro(&out, extra);
        assert_eq!(o.status.code(), Some(2), "{extra:?}");
        assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    }
    assert_eq!(kvh(&["run", "--scenario", "nonsense"]).status.code(), Some(2));
    assert_eq!(kvh(&["run", "--config", "/nonexistent/cfg.toml"]).status.code(), Some(2));
    assert_eq!(kvh(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn compare_norms() {
    let dir = tempfile::tempdir().unwrap();
    let g = PhaseGrid::periodic_square(3.0, 16).unwrap();
    let f = ScalarField::from_fn(&g, |q, p| C64::new((-(q * q + p * p)).exp(), 0.3 * q));
    let write = |name: &str, f: &ScalarField| {
        let p = dir.path().join(name);
        write_field(&mut File::create(&p).unwrap(), f).unwrap();
        p.to_str().unwrap().to_owned()
    };
    let a = write("a.kvhf", &f);
    let b = write("b.kvhf", &f.scale(C64::new(-1.0, 0.0)));

    let o = kvh(&["compare", &a, &a]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "0 0e0");

    let o = kvh(&["compare", "--norm", "linf", &a, &b]);
    assert_eq!(o.status.code(), Some(0));
    let v: f64 = stdout(&o).split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((v - 2.0 * f.max_abs()).abs() < 1e-12, "{v}");

    let small = PhaseGrid::periodic_square(3.0, 8).unwrap();
    let c = write("c.kvhf", &ScalarField::zeros(&small));
    assert_eq!(kvh(&["compare", &a, &c]).status.code(), Some(2));
}
