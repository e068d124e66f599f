use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bhm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bhm"))
        .args(args)
        .current_dir(cwd)
        .env_remove("BHM_OUT_ROOT")
        .output()
        .expect("failed to launch bhm")
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn write_toy(dir: &Path, extra: &str) -> PathBuf {
    std::fs::write(dir.join("toy.csv"), "site,tau_hat,se_tau\nA,3,1\nB,6,1.2\nC,10,1.5\n").unwrap();
    let cfg = dir.join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "summary_data = toy.csv\nfamilies = rubin_summary\nchains = 2\nwarmup = 300\niters = 300\n\
             parallel_chains = false\nout_dir = out\n{extra}"
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn toy_fit_writes_quantile_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_toy(dir.path(), "allow_nonconverged = true\n");
    let out = bhm(&["fit", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let fit_dir = dir.path().join("out/toy/rubin_summary");
    let q = std::fs::read_to_string(fit_dir.join("quantiles.csv")).unwrap();
    assert_eq!(q.lines().next(), Some("parameter,mean,2.5%,25%,50%,75%,97.5%"));
    assert!(q.lines().any(|l| l.starts_with("tau,")));
    for f in ["draws.csv", "diagnostics.json", "pooling.json", "predictive.json"] {
        assert!(fit_dir.join(f).is_file(), "missing {f}");
    }
    assert!(dir.path().join("out/manifest.json").is_file());
}

#[test]
fn same_seed_gives_identical_draws() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_toy(dir.path(), "allow_nonconverged = true\n");
    let cfg = cfg.to_str().unwrap();
    let a = bhm(&["fit", "--config", cfg, "--out-dir", "a"], dir.path());
    let b = bhm(&["fit", "--config", cfg, "--out-dir", "b"], dir.path());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    let read = |d: &str| std::fs::read(dir.path().join(d).join("toy/rubin_summary/draws.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    let c = bhm(&["fit", "--config", cfg, "--out-dir", "c", "--seed", "99"], dir.path());
    assert_eq!(c.status.code(), Some(0));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn missing_input_exits_3_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "summary_data = nowhere.csv\nfamilies = rubin_summary\nout_dir = out\n").unwrap();
    let out = bhm(&["fit", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn malformed_data_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "site,tau_hat,se_tau\nA,3,1\nB,x,1\n").unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "summary_data = bad.csv\nfamilies = rubin_summary\nout_dir = out\n").unwrap();
    let out = bhm(&["fit", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn validate_accepts_an_empty_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.cfg");
    std::fs::write(&cfg, "").unwrap();
    let out = bhm(&["validate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("families = full_data_joint"));
    assert!(text.contains("ridge_sweep = 0.25, 0.5, 1.0, 3.0"));
}

#[test]
fn validate_reports_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "lkj_eta: 2\nchains: 0\n").unwrap();
    let out = bhm(&["validate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chains"));

    std::fs::write(&cfg, "lkj_eta: 2\n").unwrap();
    let out = bhm(&["validate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("lkj_eta = 2.0"));
}

#[test]
fn nonconverged_fit_exits_5_but_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_toy(dir.path(), "");
    let out = bhm(
        &["fit", "--config", cfg.to_str().unwrap(), "--chains", "1", "--iters", "50", "--warmup", "20"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(5));
    assert!(dir.path().join("out/manifest.json").is_file());
}

#[test]
fn simulate_round_trips_through_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = bhm(
        &["simulate", "--design", "summary", "--sites", "5", "--tau", "2", "--out-dir", "sim"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sim/truth.json")).unwrap()).unwrap();
    assert_eq!(truth["values"]["tau"], 2.0);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "summary_data = sim/summary.csv\nfamilies = rubin_summary\nout_dir = fit\n").unwrap();
    let out = bhm(
        &["fit", "--config", cfg.to_str().unwrap(), "--chains", "2", "--iters", "200", "--warmup", "200", "--allow-nonconverged"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("fit/summary/rubin_summary/quantiles.csv").is_file());
}

#[test]
fn fit_without_data_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bhm(&["fit", "--family", "rubin_summary", "--out-dir", "fit"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("fit").exists());
}

#[test]
fn shipped_configs_validate() {
    for name in ["toy.cfg", "summary.cfg", "example.cfg"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = data_dir().join(name);
        let out = bhm(&["validate", "--config", cfg.to_str().unwrap()], dir.path());
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
