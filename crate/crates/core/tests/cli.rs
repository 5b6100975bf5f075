use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmlsync"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cmlsync")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn shipped_configs_parse() {
    for name in ["fig1.toml", "fig3.toml"] {
        let c = cmlsync::config::load_config(&config(name)).unwrap();
        c.validate().unwrap();
    }
}

#[test]
fn linearize_prints_jacobian() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("fig1.toml");
    let o = run(&["linearize", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("fixed_point = 0.6666666666666667"));
    assert!(s.starts_with("fixed_point"));
    assert!(dir.path().join("A.csv").exists());
    assert!(dir.path().join("B.csv").exists());
}

#[test]
fn ctrb_reports_full_rank() {
    let cfg = config("fig1.toml");
    let o = run(&["ctrb", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("det_rank = 5"));
    assert!(s.contains("det_controllable = true"));
}

#[test]
fn design_writes_gain_and_eigenvalues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("fig1.toml");
    let o = run(&["design", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("as_rank = 5"));
    let gain = fs::read_to_string(dir.path().join("gain.csv")).unwrap();
    assert_eq!(gain.lines().count(), 3);
    let eigs = fs::read_to_string(dir.path().join("eigs.csv")).unwrap();
    assert_eq!(eigs.lines().count(), 6);
}

#[test]
fn identify_writes_estimates_and_reads_back_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("fig1.toml");
    let out = dir.path().join("a");
    let o = run(&["identify", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["dataset.csv", "A_hat.csv", "B_hat.csv", "sigma_hat.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let out2 = dir.path().join("b");
    let data = out.join("dataset.csv");
    let o2 = run(&[
        "identify",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert!(o2.status.success());
    assert_eq!(fs::read(out.join("A_hat.csv")).unwrap(), fs::read(out2.join("A_hat.csv")).unwrap());
}

#[test]
fn simulate_linearized_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("fig1.toml");
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--plant",
        "linearized",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    for f in ["states.csv", "controls.csv", "gain.csv", "eigs.csv", "report.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let states = fs::read_to_string(dir.path().join("states.csv")).unwrap();
    assert_eq!(states.lines().count(), 202);
}

#[test]
fn divergence_exits_with_code_six_and_still_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["reproduce", "fig1", "--seed", "42", "--out", dir.path().to_str().unwrap()]);
    if o.status.code() == Some(6) {
        let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(!report.contains("diverged_at = none"));
    } else {
        assert_eq!(o.status.code(), Some(0));
    }
    assert!(dir.path().join("states.csv").exists());
}

#[test]
fn error_exit_codes() {
    let o = run(&["design"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[lattice]\na = 3.0\nepsilon = 0.7\nlength = 5\npins = [1]\n").unwrap();
    let o = run(&["design", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let missing = dir.path().join("nope.toml");
    let o = run(&["design", "--config", missing.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));

    let o = run(&["reproduce", "fig2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn too_few_samples_is_identifiability_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let base = fs::read_to_string(config("fig1.toml")).unwrap();
    let patched = base
        .replace("model = \"analytic\"", "model = \"identified\"")
        .replace("sysid_samples = 10000", "sysid_samples = 4");
    assert_ne!(base, patched, "fig1.toml layout changed");
    fs::write(&cfg, patched).unwrap();
    let o = run(&["design", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}
