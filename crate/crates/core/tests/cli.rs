use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vfdiff::config::ExperimentConfig;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn vfdiff(args: &[&str], threads_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vfdiff"));
    cmd.args(args).env_remove("VFDIFF_THREADS");
    if let Some(t) = threads_env {
        cmd.env("VFDIFF_THREADS", t);
    }
    cmd.output().unwrap()
}

fn run_ok(config: &Path, out: &Path, command: &str, extra: &[&str]) {
    let mut args = vec!["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    args.push(command);
    let o = vfdiff(&args, None);
    assert!(o.status.success(), "{command}: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn shipped_configs_round_trip() {
    for name in ["p1_basic.toml", "p2_corridor.toml"] {
        let text = fs::read_to_string(config_path(name)).unwrap();
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again, "{name}");
    }
}

#[test]
fn check_reports_violated_hypothesis() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config_path("p2_corridor.toml")).unwrap().replace("a0 = 0.2", "a0 = 0.0");
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, text).unwrap();
    let o = vfdiff(&["--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap(), "check"], None);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("H4'"));
}

#[test]
fn malformed_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "problem = \"p1\"\nbogus = 1\n").unwrap();
    let o = vfdiff(&["--config", cfg.to_str().unwrap(), "check"], None);
    assert_eq!(o.status.code(), Some(2));
    let missing = vfdiff(&["--config", dir.path().join("nope.toml").to_str().unwrap(), "check"], None);
    assert!(!missing.status.success());
}

#[test]
fn repeated_solves_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("p1_basic.toml");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&cfg, &a, "solve", &[]);
    run_ok(&cfg, &b, "solve", &[]);
    for f in ["trajectory.csv", "flux.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn mc_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("p1_basic.toml");
    let one = dir.path().join("one");
    let eight = dir.path().join("eight");
    let env = dir.path().join("env");
    run_ok(&cfg, &one, "mc", &["--threads", "1"]);
    run_ok(&cfg, &eight, "mc", &["--threads", "8"]);
    let o = vfdiff(&["--config", cfg.to_str().unwrap(), "--out", env.to_str().unwrap(), "mc"], Some("3"));
    assert!(o.status.success());
    for f in ["mc_0.csv", "mc_1.csv", "mc_2.csv", "mc_summary.csv", "manifest.json"] {
        let reference = fs::read(one.join(f)).unwrap();
        assert_eq!(reference, fs::read(eight.join(f)).unwrap(), "{f}");
        assert_eq!(reference, fs::read(env.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn manifest_lists_outputs_with_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("q");
    run_ok(&config_path("p1_basic.toml"), &out, "qoi", &[]);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "qoi");
    assert_eq!(manifest["seed"], 7);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["file"] == "qoi.csv"));
    for o in outputs {
        assert_eq!(o["sha256"].as_str().unwrap().len(), 64);
    }
}
