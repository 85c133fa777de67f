use std::process::Command;

use mvlr::harness::sweep::{expand_grid, mean_stderr};
use mvlr::harness::{run_sweep, Estimator, ExperimentConfig};

fn small(preset: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(preset).unwrap();
    cfg.grid.snr_db = vec![-10.0, 0.0];
    cfg.grid.passages = vec![50];
    cfg.trials = 4;
    cfg.test_passages = 2;
    cfg
}

#[test]
fn csv_has_one_row_per_point_and_estimator() {
    let cfg = small("s1");
    let points = expand_grid(&cfg).unwrap().len();
    let res = run_sweep(&cfg).unwrap();
    let mut buf = Vec::new();
    res.write_csv(&mut buf).unwrap();
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    let header = rdr.headers().unwrap().clone();
    assert_eq!(&header[0], "snr_db");
    assert!(header.iter().any(|h| h == "r_hat_mode"));
    let rows = rdr.records().count();
    assert_eq!(rows, points * cfg.estimators.len());
    for r in res.rows() {
        assert!(r.se_mean.is_finite() && r.mse_mean.is_finite());
        assert_eq!(r.trials, cfg.trials);
    }
}

#[test]
fn perfect_csi_has_zero_mse() {
    let mut cfg = small("s2");
    cfg.estimators = vec![Estimator::Perfect];
    for r in run_sweep(&cfg).unwrap().rows() {
        assert_eq!(r.mse_mean, 0.0);
        assert!(r.se_mean > 0.0);
    }
}

#[test]
fn stderr_shrinks_with_trials() {
    let mut cfg = small("s1");
    cfg.estimators = vec![Estimator::Uml];
    cfg.grid.snr_db = vec![-10.0];
    cfg.test_passages = 1;
    cfg.trials = 100;
    let a = run_sweep(&cfg).unwrap().rows()[0].mse_stderr;
    cfg.trials = 400;
    let b = run_sweep(&cfg).unwrap().rows()[0].mse_stderr;
    let ratio = a / b;
    assert!((1.4..2.8).contains(&ratio), "stderr ratio {ratio}");
}

#[test]
fn mean_stderr_of_constant_is_zero() {
    let (m, s) = mean_stderr(&[2.0, 2.0, 2.0]);
    assert_eq!((m, s), (2.0, 0.0));
}

#[test]
fn cli_align_fit_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    let mut cfg = small("s1");
    cfg.grid.snr_db = vec![-5.0];
    cfg.alignment.passages_per_beam = 4;
    std::fs::write(&cfg_path, cfg.to_toml_string().unwrap()).unwrap();
    let store = dir.path().join("store.bin");
    let csv_out = dir.path().join("eval.csv");
    let bin = env!("CARGO_BIN_EXE_mvlr");
    let run = |args: &[&str]| {
        let out = Command::new(bin).arg("--config").arg(&cfg_path).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["--out", store.to_str().unwrap(), "align"]);
    run(&["fit", "--store", store.to_str().unwrap()]);
    run(&["--out", csv_out.to_str().unwrap(), "evaluate", "--store", store.to_str().unwrap()]);
    let text = std::fs::read_to_string(&csv_out).unwrap();
    assert_eq!(text.lines().count(), 1 + cfg.estimators.len());

    // a different array configuration must be rejected
    let mut other = cfg.clone();
    other.grid.rf_chains = vec![[2, 4]];
    std::fs::write(&cfg_path, other.to_toml_string().unwrap()).unwrap();
    let out = Command::new(bin)
        .arg("--config")
        .arg(&cfg_path)
        .args(["evaluate", "--store", store.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn invalid_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    let mut cfg = small("s1");
    cfg.trials = 0;
    std::fs::write(&p, cfg.to_toml_string().unwrap()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mvlr")).arg("--config").arg(&p).arg("show-config").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
