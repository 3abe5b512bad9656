use std::path::Path;
use std::process::{Command, Output};

fn lfv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfv")).args(args).output().unwrap()
}

const FELLER: &str = r#"
model = "feller"
replicates = 50
horizon = 1.0
n_obs = 5
base_seed = 3

[params]
a = 0.5
b = 0.2
x0 = 1.0
dt = 0.01
"#;

const SCHEDULE: &str = r#"
model = "lfvsfe-lookdown"
replicates = 1
horizon = 1.0

[schedule]
regime = "neutral"
j = { exponent = 0.85 }
k = { exponent = 0.85 }
u = 1.0
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn simulate_is_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "f.toml", FELLER);
    for (out, workers) in [("a", "1"), ("b", "2")] {
        let o = lfv(&["simulate", "--config", &cfg, "--out", &d.path().join(out).to_string_lossy(), "--workers", workers]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(d.path().join("a/feller.csv")).unwrap();
    let b = std::fs::read(d.path().join("b/feller.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 7);
    assert!(d.path().join("a/plot.py").exists());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.path().join("a/feller_report.json")).unwrap()).unwrap();
    assert_eq!(report["provenance"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_flag_changes_output() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "f.toml", FELLER);
    let out = d.path().to_string_lossy().into_owned();
    lfv(&["simulate", "--config", &cfg, "--out", &format!("{out}/a")]);
    lfv(&["simulate", "--config", &cfg, "--out", &format!("{out}/b"), "--seed", "4"]);
    let a = std::fs::read(d.path().join("a/feller.csv")).unwrap();
    let b = std::fs::read(d.path().join("b/feller.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn config_errors_exit_with_2() {
    let d = tempfile::tempdir().unwrap();
    let bad = write(d.path(), "bad.toml", &FELLER.replace("dt = 0.01", "dt = 0.01\nstep = 2"));
    let o = lfv(&["simulate", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));
    let o = lfv(&["simulate", "--config", "/nonexistent.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failing_schedule_exits_with_1_and_names_the_condition() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "s.toml", SCHEDULE);
    let o = lfv(&["validate-schedule", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("FAIL K/J → 0"), "{text}");
    let ok = write(d.path(), "ok.toml", &SCHEDULE.replace("k = { exponent = 0.85 }", "k = { exponent = 0.7 }"));
    assert_eq!(lfv(&["validate-schedule", "--config", &ok]).status.code(), Some(0));
}

#[test]
fn self_comparison_passes() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "f.toml", FELLER);
    let o = lfv(&["compare", "--config", &cfg, "--against", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn accept_runs_a_subset() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_string_lossy().into_owned();
    let o = lfv(&["accept", "--only", "9", "--out", &out]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("PASS [ 9]"));
    assert!(d.path().join("acceptance.json").exists());
}
