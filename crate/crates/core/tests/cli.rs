use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_foilfem"))
}

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().args(args).arg("--output-dir").arg(dir).output().unwrap()
}

/// Bundled stand-alone configuration on a coarser grid.
fn small_standalone(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(bundled("standalone_50khz.toml"))
        .unwrap()
        .replace("nx = 160", "nx = 20")
        .replace("ny = 320", "ny = 40");
    let path = dir.join("small.toml");
    fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_solution_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_standalone(dir.path());
    let out = run_in(dir.path(), &["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("quantity,unit,real,imag"));
    for q in ["f,Hz,", "N_a,-,", "N_u,-,", "W,J,", "V_1,V,", "I_1,A,", "Z_1,Ohm,", "constraint_residual_1,-,"] {
        assert!(text.lines().any(|l| l.starts_with(q)), "missing {q}");
    }
    // scientific notation with 17 significant digits
    let w = text.lines().find(|l| l.starts_with("W,")).unwrap();
    let value = w.split(',').nth(2).unwrap();
    assert!(value.contains('e') && value.split('e').next().unwrap().len() >= 17, "{value}");
}

#[test]
fn identical_configs_give_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_standalone(a.path());
    for dir in [a.path(), b.path()] {
        let out = run_in(dir, &["run", cfg.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let fa = fs::read(a.path().join("solution.csv")).unwrap();
    let fb = fs::read(b.path().join("solution.csv")).unwrap();
    assert_eq!(fa, fb);
}

#[test]
fn transient_outputs_have_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(bundled("transformer.toml"))
        .unwrap()
        .replace("nx = 60", "nx = 30")
        .replace("ny = 72", "ny = 36")
        .replace("t_end = 0.06", "t_end = 0.004")
        .replace("dt = 2e-4", "dt = 4e-4");
    let cfg = dir.path().join("tr.toml");
    fs::write(&cfg, text).unwrap();
    let out = run_in(dir.path(), &["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let ts = fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
    let header: Vec<&str> = ts.lines().next().unwrap().split(',').collect();
    assert_eq!(
        &header[..6],
        &["t [s]", "V_s [V]", "V_1 [V]", "V_2 [V]", "I_1 [A]", "I_2 [A]"]
    );
    assert!(header.contains(&"I_C [A]") && header.contains(&"V_RL [V]"));
    assert_eq!(ts.lines().count(), 1 + 11);
    let eb = fs::read_to_string(dir.path().join("energy_balance.csv")).unwrap();
    assert!(eb.starts_with("t [s],source [J],"));
    let summary = fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    for line in summary.lines().filter(|l| l.starts_with("kcl") || l.starts_with("kvl")) {
        let v: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(v < 1e-10, "{line}");
    }
}

#[test]
fn negative_fill_factor_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(bundled("standalone_50khz.toml"))
        .unwrap()
        .replace("fill_factor = 0.9", "fill_factor = -0.9");
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, text).unwrap();
    let out = run_in(dir.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("foil_windings[0]") && msg.contains("fill_factor"), "{msg}");
    assert!(!dir.path().join("solution.csv").exists());
}

#[test]
fn syntax_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.toml");
    fs::write(&cfg, "[geometry]\nnx = 4\nny = = 3\n").unwrap();
    let out = run_in(dir.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn singular_static_problem_is_a_solver_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(small_standalone(dir.path()))
        .unwrap()
        .replace(r#"dirichlet = ["left", "right", "bottom", "top"]"#, "dirichlet = []")
        .replace("frequency = 5e4", "frequency = 0.0");
    let cfg = dir.path().join("floating.toml");
    fs::write(&cfg, text).unwrap();
    let out = run_in(dir.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("nullspace"), "{}", stderr(&out));
}

#[test]
fn study_and_oracle_commands() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(bundled("standalone_study.toml"))
        .unwrap()
        .replace("levels = [[5, 40], [10, 80], [20, 160], [40, 320]]", "levels = [[5, 40], [10, 80]]")
        .replace("counts = [1, 2, 3, 4, 6]", "counts = [1, 3]")
        .replace(r#"reference = { kind = "resolved", nx = 200, ny = 320 }"#, r#"reference = { kind = "resolved", nx = 50, ny = 80 }"#);
    let cfg = dir.path().join("study.toml");
    fs::write(&cfg, text).unwrap();

    let out = run_in(dir.path(), &["study", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("N_a [-],N_u [-],kind [-],W [J],rel_error [-]"));
    assert_eq!(lines.count(), 2 * 3 * 2);
    for line in table.lines().skip(1) {
        let err: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!(err.is_finite() && err >= 0.0);
    }

    let out = run_in(dir.path(), &["oracle", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let oracle = fs::read_to_string(dir.path().join("oracle.csv")).unwrap();
    assert!(oracle.lines().any(|l| l.starts_with("W_ref,J,")));
    assert!(oracle.lines().any(|l| l.starts_with("turns,-,2.0000000000000000e1")));
}

#[test]
fn missing_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["run", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("config.toml"), "{}", stderr(&out));
}
