use std::path::Path;
use std::process::{Command, Output};

use gcstein::report::Table;
use gcstein_cli::Config;

fn gcstein(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcstein"))
        .args(args)
        .current_dir(dir)
        .env_remove("GCSTEIN_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const MM1_HALF: &str = r#"{"model": {"kind": "gg1",
    "arrival": {"family": "exponential", "rate": 0.5},
    "service": {"family": "exponential", "rate": 1.0}},
  "checks": {"bound": {"mode": "simulated", "conditional_residual": 2.0}}}"#;

const TANDEM: &str = r#"{"model": {"kind": "tandem",
    "arrival": {"family": "exponential", "rate": 0.8},
    "service1": {"family": "exponential", "rate": 1.0},
    "service2": {"family": "exponential", "rate": 1.0}},
  "checks": {"rbm": {"horizon": 2000.0, "path_horizon": 5.0}}}"#;

#[test]
fn print_config_lists_every_default() {
    let dir = tempfile::tempdir().unwrap();
    let o = gcstein(&["--print-config", "--seed", "9"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = Config::from_json(&stdout(&o)).unwrap();
    assert_eq!(cfg.run.seed, 9);
    for key in [
        "\"model\"",
        "\"run\"",
        "\"checks\"",
        "\"output\"",
        "\"burn_in\"",
        "\"rhos\"",
        "\"drift_mode\"",
    ] {
        assert!(stdout(&o).contains(key), "missing {key}");
    }
}

#[test]
fn identities_pass_on_mm1_at_ten_million_events() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"run": {"events": 2500000, "replications": 4, "jobs": 4, "batches": 8}}"#,
    );
    let o = gcstein(
        &["identities", "--config", &cfg, "--out-dir", "out"],
        dir.path(),
    );
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let t = Table::read_file(&dir.path().join("out/identities.csv")).unwrap();
    assert_eq!(
        t.header,
        ["identity_id", "estimate", "half_width", "target", "pass"]
    );
    assert!(t.rows.iter().all(|r| r[4] == "true"));
    assert!(dir.path().join("out/identities.svg").exists());
}

#[test]
fn bound_with_supplied_residual_matches_hand_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", MM1_HALF);
    let o = gcstein(&["bound", "--config", &cfg, "--out-dir", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let t = Table::read_file(&dir.path().join("out/bound.csv")).unwrap();
    assert_eq!(
        t.header,
        ["model_id", "mode", "eps0", "epsA", "epsD", "total", "theta", "sigma2", "delta"]
    );
    let eps0: f64 = t.rows[0][2].parse().unwrap();
    assert!((eps0 - 2.0).abs() < 1e-12, "{eps0}");
}

#[test]
fn sweep_with_one_point_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"checks": {"sweep": {"rhos": [0.9]}}}"#,
    );
    let o = gcstein(&["sweep", "--config", &cfg, "--out-dir", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at least 3"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"checks": {"w1": {"sample": 10}}}"#,
    );
    let o = gcstein(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checks.w1.sample"), "{}", stderr(&o));
}

#[test]
fn unstable_model_echoes_load() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"model": {"kind": "gg1", "arrival": {"family": "exponential", "rate": 1.25},
            "service": {"family": "exponential", "rate": 1.0}}}"#,
    );
    let o = gcstein(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("1.25"), "{}", stderr(&o));
}

#[test]
fn env_var_sets_default_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gcstein"))
        .args(["simulate", "--events", "20000"])
        .current_dir(dir.path())
        .env("GCSTEIN_OUT_DIR", "from_env")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("from_env/simulate.csv").exists());
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn same_seed_gives_byte_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"run": {"events": 100000, "replications": 3},
            "checks": {"w1": {"samples": 2000, "burn_in": 10000, "resamples": 20}}}"#,
    );
    for cmd in ["simulate", "identities", "bar", "w1"] {
        let a = gcstein(
            &[cmd, "--config", &cfg, "--out-dir", "a", "--jobs", "1"],
            dir.path(),
        );
        let b = gcstein(
            &[cmd, "--config", &cfg, "--out-dir", "b", "--jobs", "3"],
            dir.path(),
        );
        assert!(
            a.status.code().is_some_and(|c| c < 2),
            "{cmd}: {}",
            stderr(&a)
        );
        assert_eq!(a.status.code(), b.status.code());
    }
    let (a, b) = (
        csv_files(&dir.path().join("a")),
        csv_files(&dir.path().join("b")),
    );
    assert!(a.len() >= 8);
    assert_eq!(a, b);
    let c = gcstein(
        &[
            "simulate",
            "--config",
            &cfg,
            "--out-dir",
            "c",
            "--seed",
            "2",
        ],
        dir.path(),
    );
    assert!(c.status.success());
    let first = |d: &str| std::fs::read(dir.path().join(d).join("simulate.csv")).unwrap();
    assert_ne!(first("a"), first("c"));
}

#[test]
fn every_csv_has_a_header_row() {
    let dir = tempfile::tempdir().unwrap();
    let gg1 = write_config(
        dir.path(),
        "g.json",
        r#"{"run": {"events": 50000}, "checks": {"w1": {"samples": 500, "burn_in": 5000, "resamples": 10}}}"#,
    );
    let tandem = write_config(dir.path(), "t.json", TANDEM);
    for (cmd, cfg) in [
        ("simulate", &gg1),
        ("stein", &gg1),
        ("bound", &gg1),
        ("w1", &gg1),
        ("rbm", &tandem),
    ] {
        let o = gcstein(&[cmd, "--config", cfg, "--out-dir", "out"], dir.path());
        assert!(
            o.status.code().is_some_and(|c| c < 2),
            "{cmd}: {}",
            stderr(&o)
        );
    }
    for (name, bytes) in csv_files(&dir.path().join("out")) {
        let text = String::from_utf8(bytes).unwrap();
        let header = text.lines().next().unwrap_or_default();
        assert!(
            !header.is_empty()
                && header.parse::<f64>().is_err()
                && !header.starts_with(|c: char| c.is_ascii_digit())
                && header
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ','),
            "{name}: {header}"
        );
    }
}

#[test]
fn rbm_runs_on_tandem_and_identities_reject_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.json", TANDEM);
    let o = gcstein(&["rbm", "--config", &cfg, "--out-dir", "out"], dir.path());
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let path = Table::read_file(&dir.path().join("out/rbm_path.csv")).unwrap();
    assert_eq!(path.header, ["t", "y1", "y2", "i1", "i2"]);
    assert_eq!(path.rows.len(), 5000);
    let o = gcstein(
        &["identities", "--config", &cfg, "--out-dir", "out"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_decay_fit_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"run": {"events": 300000},
            "checks": {"w1": {"samples": 20000, "burn_in": 200000, "resamples": 20},
                       "sweep": {"rhos": [0.8, 0.9, 0.95]}}}"#,
    );
    let o = gcstein(&["sweep", "--config", &cfg, "--out-dir", "out"], dir.path());
    assert!(o.status.code().is_some_and(|c| c < 2), "{}", stderr(&o));
    let t = Table::read_file(&dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(
        t.header,
        ["config_id", "delta", "w1", "w1_ci", "bound_total", "pass"]
    );
    assert_eq!(t.rows.len(), 3);
    let d = Table::read_file(&dir.path().join("out/decay.csv")).unwrap();
    assert_eq!(d.rows.len(), 1);
    let svg = std::fs::read_to_string(dir.path().join("out/sweep.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<circle").count() == 6);
}

#[test]
fn missing_command_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gcstein(&[], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
