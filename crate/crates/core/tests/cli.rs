use std::path::Path;
use std::process::{Command, Output};

use brwlab::experiments::{ExperimentConfig, ExperimentKind, RESULTS_SCHEMA};

fn brwlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brwlab"))
        .args(args)
        .env_remove("BRWLAB_OUT")
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&brwlab(dir.path(), &["no-such-command"])), 1);
    assert_eq!(code(&brwlab(dir.path(), &["simulate", "--n", "4"])), 1);
    assert_eq!(code(&brwlab(dir.path(), &["experiment"])), 1);
    assert_eq!(code(&brwlab(dir.path(), &["--help"])), 0);
}

#[test]
fn check_law_accepts_builtins() {
    let dir = tempfile::tempdir().unwrap();
    for law in ["gaussian_dyadic", "two_config"] {
        let o = brwlab(dir.path(), &["check-law", "--law", law]);
        assert_eq!(code(&o), 0, "{law}: {}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["accepted"], true);
    }
}

#[test]
fn simulate_then_query_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let o = brwlab(dir.path(), &["simulate", "--law", "gaussian_dyadic", "--n", "8", "--seed", "4", "--out", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["particles"], 256);
    let snap = dir.path().join("run/population.brw");
    assert!(snap.exists());
    let snap = snap.to_str().unwrap();

    let o = brwlab(dir.path(), &["gibbs", "--snapshot", snap, "--beta", "1.0", "--m", "8"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["log_w"].as_f64().unwrap().is_finite());

    let o = brwlab(dir.path(), &["overlap", "--snapshot", snap, "--beta", "0", "--eps", "0.25"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["exact_mass"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert_eq!(code(&brwlab(dir.path(), &["overlap", "--snapshot", snap, "--beta", "1", "--pairs", "10"])), 1);
}

#[test]
fn dump_default_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = brwlab(dir.path(), &["experiment", "--dump-default"]);
    assert_eq!(code(&o), 0);
    let cfg = ExperimentConfig::from_toml_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn malformed_configs_are_rejected_with_a_path() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("schedule.toml", "[regime]\nregime = \"critical-window-above\"\ngamma = 1.0\n"),
        ("kind.toml", "[regime]\nregime = \"above-critical-strong\"\nschedule = { kind = \"cubic\" }\n"),
        ("field.toml", "[budget]\nn_tres = 3\n"),
    ];
    for (name, text) in cases {
        std::fs::write(dir.path().join(name), text).unwrap();
        let o = brwlab(dir.path(), &["experiment", "--config", name, "--seed", "1"]);
        assert_eq!(code(&o), 1, "{name}: {}", String::from_utf8_lossy(&o.stdout));
    }
    let o = brwlab(dir.path(), &["experiment", "--config", "field.toml", "--seed", "1"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget"));
}

#[test]
fn experiment_is_deterministic_and_report_replays_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig { experiment_id: "cli-overlap".into(), kind: ExperimentKind::Overlap, ..ExperimentConfig::default() };
    cfg.regime.n_list = vec![4, 6];
    cfg.budget.n_trees = 50;
    std::fs::write(dir.path().join("c.toml"), cfg.to_toml_string()).unwrap();
    let run = |out: &str| {
        let o = brwlab(dir.path(), &["experiment", "--config", "c.toml", "--seed", "9", "--out", out]);
        assert!(matches!(code(&o), 0 | 2 | 3), "{}", String::from_utf8_lossy(&o.stderr));
        (code(&o), std::fs::read(dir.path().join(out).join("results.csv")).unwrap())
    };
    let (c1, a) = run("a");
    let (c2, b) = run("b");
    assert_eq!(c1, c2);
    assert_eq!(a, b);
    assert!(String::from_utf8_lossy(&a).contains(RESULTS_SCHEMA));
    let o = brwlab(dir.path(), &["report", "a"]);
    assert_eq!(code(&o), c1);
    let o = brwlab(dir.path(), &["--threads", "1", "experiment", "--config", "c.toml", "--seed", "9", "--out", "c"]);
    assert_eq!(code(&o), c1);
    assert_eq!(std::fs::read(dir.path().join("c/results.csv")).unwrap(), a);
}
