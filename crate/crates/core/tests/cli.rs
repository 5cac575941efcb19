use std::process::Command;

use dmd_mpc_core::harness::{parse_csv, ExperimentConfig, HEADER};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmd-mpc"))
}

const SMALL: &[&str] = &["--samples", "40", "--dynamics-samples", "2", "--horizon", "8", "--steps", "15"];

#[test]
fn episode_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let status = bin().arg("episode").args(SMALL).args(["--master-seed", "9", "-o"]).arg(&path).status().unwrap();
        assert!(status.success());
        std::fs::read(path).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let text = String::from_utf8(a).unwrap();
    let rows = parse_csv(&text).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(text.lines().any(|l| l == HEADER));
    assert!(text.lines().any(|l| l.starts_with("# config_sha256")));
}

#[test]
fn sweep_writes_one_row_per_cell_and_episode() {
    let out = bin()
        .arg("sweep")
        .args(SMALL)
        .args(["--env", "cartpole_discrete", "--gammas", "0.01,0.1,1", "--episodes", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = parse_csv(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.env == "cartpole_discrete" && r.n_samples == 40));
    assert_eq!(rows[0].gamma, 0.01);
    assert_eq!(rows[5].gamma, 1.0);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        env: dmd_mpc_core::harness::EnvKind::LtiLqr,
        horizon: 5,
        episode_length: 10,
        n_samples: 50,
        ..Default::default()
    };
    let path = dir.path().join("run.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let out = bin().arg("episode").arg("--config").arg(&path).args(["--gamma", "0.5"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = parse_csv(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(rows[0].env, "lti_lqr");
    assert_eq!(rows[0].gamma, 0.5);
}

#[test]
fn invalid_combination_is_rejected() {
    let out = bin().arg("episode").args(["--update", "mppi"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}
