//! The `ctp` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ctp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctp")).args(args).output().expect("binary runs")
}

fn run_with(dir: &Path, sub: &str, config: &str) -> Output {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    ctp(&[sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/manifest.json")).unwrap()).unwrap()
}

#[test]
fn schema_lists_keys() {
    let o = ctp(&["--print-config-schema"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for k in ["model.phi", "seed", "threads", "blowup.v_target", "lemmas.N_list"] {
        assert!(text.contains(k), "{k}");
    }
}

#[test]
fn lemmas_writes_tail_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "lemmas", "seed = 1\n[lemmas]\naudit_n_traj = 200\n");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(dir.path().join("out/poisson_tail.csv")).unwrap();
    assert!(table.starts_with("# build="));
    assert_eq!(table.lines().count(), 2 + 15);
    let m = manifest(dir.path());
    assert_eq!(m["report"]["tail_violations"], 0);
    assert_eq!(m["exit_code"], 0);
}

#[test]
fn blowup_reaches_target() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "blowup", "seed = 0\n[blowup]\nv_target = 10000\n");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(dir.path());
    assert_eq!(m["report"]["blew_up"], true);
    assert_eq!(m["report"]["escape_index"], 9999);
    let csv = fs::read_to_string(dir.path().join("out/blowup.csv")).unwrap();
    assert!(csv.lines().count() > 10_000);
}

#[test]
fn tiny_convergence_study_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "convergence", "seed = 2\nn_traj = 10\n[convergence]\nn_boot = 16\n");
    assert_eq!(o.status.code(), Some(18));
    assert_eq!(manifest(dir.path())["error_code"], "inconclusive_noise");
}

#[test]
fn invalid_config_reports_every_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "particle", "[model]\nphi = 1.5\nU = 0\nbogus = 1\n");
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    for k in ["model.phi", "model.U", "model.bogus"] {
        assert!(err.contains(k), "{k} missing in {err}");
    }
}

#[test]
fn missing_seed_warns_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "kinetic", "[kinetic]\nn_paths = 100\n");
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no seed given"));
    let m = manifest(dir.path());
    assert_eq!(m["config"]["seed"], 0);
    // the echo in the manifest parses back to the same echo
    let echo = m["config_echo"].as_str().unwrap();
    let again = ctp_cli::parse_config(echo).unwrap();
    assert_eq!(again.echo(), echo);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seed = 1\nn_traj = 20\n").unwrap();
    let out = dir.path().join("out");
    let o = ctp(&["particle", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(manifest(dir.path())["config"]["seed"], 9);
}
