use std::collections::HashSet;
use std::path::Path;
use std::process::{Command, Output};

use schrodinger_cli::io::{read_coefficients, read_field};

const SMALL: &str = r#"
seed = 11

[experiment.mcmc]
iterations = 1500

[run]
eps = [0.2, 0.1, 0.05]
replications = 2
prior_draws = 20
"#;

fn schrodinger(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schrodinger"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn verify_on_default_config_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = schrodinger(&["verify", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rows = csv::Reader::from_path(out.join("verify.csv")).unwrap();
    let headers = rows.headers().unwrap().clone();
    let passed = headers.iter().position(|h| h == "passed").unwrap();
    let records: Vec<_> = rows.records().map(|r| r.unwrap()).collect();
    assert!(records.len() >= 8);
    assert!(records.iter().all(|r| &r[passed] == "true"));
    let manifest: serde_json::Value = serde_json::from_slice(&read(&out, "manifest.json")).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["command"], "verify");
    assert!(manifest["git_describe"].as_str().is_some_and(|s| !s.is_empty()));
}

#[test]
fn malformed_config_exits_with_field_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for (text, field) in [
        ("[run]\nreplicates = 3\n", "replicates"),
        ("[run]\nbetas = [1.5]\n", "run.betas"),
        ("[experiment]\npsi_centers = [0.02]\n", "experiment"),
        ("[run]\neps = \"small\"\n", "eps"),
    ] {
        let cfg = write_config(tmp.path(), text);
        let o = schrodinger(&["mcmc", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        let record: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
        assert_eq!(record["kind"], "config");
        assert!(record["message"].as_str().unwrap().contains(field), "{record}");
        assert!(out.join("error.json").exists());
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        for cmd in ["mcmc", "rates"] {
            let o = schrodinger(&[cmd, "--config", &cfg, "--out", dir.to_str().unwrap(), "--threads", threads]);
            assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
    }
    for name in ["mcmc.csv", "mcmc_draws.csv", "rates.csv", "rates_summary.csv", "rates_fit.csv", "fbar_eps1.field"] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
}

#[test]
fn record_rows_carry_keys_and_are_unique() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = schrodinger(&["sample-prior", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rows = csv::Reader::from_path(out.join("prior.csv")).unwrap();
    let headers: Vec<String> = rows.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&headers[..3], ["experiment", "seed", "eps"]);
    let mut seen = HashSet::new();
    for r in rows.records() {
        let r = r.unwrap();
        assert_eq!(&r[0], "sample-prior");
        assert_eq!(&r[1], "11");
        assert!(r[2].parse::<f64>().unwrap() > 0.0);
        let key = (r[2].to_string(), r[3].to_string(), r[4].to_string(), r[5].to_string());
        assert!(seen.insert(key), "duplicate row {r:?}");
    }
    assert_eq!(seen.len(), 3 * 20 * 4);
    let trees = read_coefficients(&out.join("prior_eps0.coef")).unwrap();
    assert_eq!(trees.len(), 20);
}

#[test]
fn manifest_reloads_as_config_and_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    let o = schrodinger(&["mcmc", "--config", &cfg, "--seed", "99", "--out", first.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = first.join("manifest.json");
    let o = schrodinger(&["mcmc", "--config", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&first, "mcmc.csv"), read(&second, "mcmc.csv"));
    let m1: serde_json::Value = serde_json::from_slice(&read(&first, "manifest.json")).unwrap();
    let m2: serde_json::Value = serde_json::from_slice(&read(&second, "manifest.json")).unwrap();
    assert_eq!(m1["config"], m2["config"]);
    assert_eq!(m1["seed"], 99);
}

#[test]
fn forward_dumps_readable_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = schrodinger(&["forward", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let u = read_field(&out.join("u.field")).unwrap();
    let rows = csv::Reader::from_path(out.join("forward.csv")).unwrap().records().count();
    assert_eq!(rows, u.values().len());
    assert!(u.values().iter().all(|v| *v > 0.0));
}
