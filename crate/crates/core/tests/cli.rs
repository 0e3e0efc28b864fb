//! End-to-end runs of the `rbmlab` binary.

use std::path::Path;
use std::process::{Command, Output};

use rbmlab::exp_cli::{read_results, MANIFEST_FILE, RESULT_FILE};

fn rbmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbmlab")).args(args).output().expect("binary runs")
}

fn out_arg(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

#[test]
fn passing_run_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = rbmlab(&["llt_check", "--seed", "3", "--out", out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("PASS") && !stdout.contains("FAIL"));

    let (rows, truncated) = read_results(&dir.path().join(RESULT_FILE)).unwrap();
    assert!(truncated.is_none());
    assert!(rows.iter().any(|r| r.quantity == "llt_relative_error" && r.n == "50"));
    assert!(rows.iter().all(|r| r.seed == 3 && r.params_hash.len() == 16));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["recipe"], "llt_check");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["lattice"]["l"], 64);
    assert_eq!(manifest["versions"]["result_schema"], 1);
    assert!(manifest["runtime_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest["summary"]["fail"], 0);
    assert!(manifest["truncated"].is_null());
}

#[test]
fn statistical_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tight.toml");
    std::fs::write(&cfg, "[params]\nllt_tol = 0.0\n").unwrap();
    let o = rbmlab(&["llt_check", "--config", cfg.to_str().unwrap(), "--out", out_arg(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stdout).unwrap().contains("FAIL"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rbmlab(&["no_such_recipe"]).status.code(), Some(2));
    assert_eq!(rbmlab(&[]).status.code(), Some(2));

    let cfg = dir.path().join("typo.toml");
    std::fs::write(&cfg, "[lattice]\nwidth = 3\n").unwrap();
    let strict = rbmlab(&["llt_check", "--strict", "--config", cfg.to_str().unwrap(), "--out", out_arg(dir.path())]);
    assert_eq!(strict.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&strict.stderr).contains("width"));

    let mislabeled = dir.path().join("regime.toml");
    std::fs::write(&mislabeled, "[model]\nregime = \"supercritical\"\n").unwrap();
    let o = rbmlab(&["moment_reduction", "--strict", "--config", mislabeled.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn parity_rounding_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("odd.toml");
    std::fs::write(
        &cfg,
        "[lattice]\nl = 64\nw = 8.0\n[poly]\ndegrees = [3, 4]\n[sampling]\nsamples = 20\n",
    )
    .unwrap();
    let out = dir.path().join("r");
    let o = rbmlab(&["factorization", "--config", cfg.to_str().unwrap(), "--out", out_arg(&out)]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("degree 3 rounded to 4"));
    let manifest = std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap();
    assert!(manifest.contains("degree 3 rounded to 4"));
    let (rows, _) = read_results(&out.join(RESULT_FILE)).unwrap();
    assert!(rows.iter().any(|r| r.n == "4;4"));
}

#[test]
fn identical_runs_give_identical_csv_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, "[sampling]\nsamples = 60\n").unwrap();
    let mut bodies = Vec::new();
    for (sub, threads) in [("a", "1"), ("b", "2")] {
        let out = dir.path().join(sub);
        let o = rbmlab(&[
            "tadpole_demo",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "11",
            "--threads",
            threads,
            "--out",
            out_arg(&out),
        ]);
        assert_eq!(o.status.code(), Some(0));
        bodies.push(std::fs::read(out.join(RESULT_FILE)).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);

    let out = dir.path().join("c");
    rbmlab(&["tadpole_demo", "--config", cfg.to_str().unwrap(), "--seed", "12", "--out", out_arg(&out)]);
    assert_ne!(bodies[0], std::fs::read(out.join(RESULT_FILE)).unwrap());
}

#[test]
fn list_names_every_recipe() {
    let o = rbmlab(&["list"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["llt_check", "identity_suite", "edge_universality", "critical_scan", "constants"] {
        assert!(text.contains(name));
    }
}

#[cfg(unix)]
#[test]
fn interrupt_leaves_truncation_marker() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let mut child = Command::new(env!("CARGO_BIN_EXE_rbmlab"))
        .args(["moment_reduction", "--out", out_arg(&out)])
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let csv = out.join(RESULT_FILE);
    for _ in 0..200 {
        if csv.exists() {
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    std::thread::sleep(std::time::Duration::from_millis(500));
    let killed = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(3));
    let (_, truncated) = read_results(&csv).unwrap();
    assert_eq!(truncated.as_deref(), Some("run cancelled"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["truncated"], "run cancelled");
}
