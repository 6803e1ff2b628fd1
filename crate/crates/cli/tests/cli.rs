use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_numeraire");

fn write(dir: &TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn numeraire(config: &Path, extra: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn bessel_config(tasks: &str, n_paths: usize) -> String {
    format!(
        r#"{{
            "model": {{"preset": "bessel", "K": 1.0}},
            "pair": [0, 1],
            "maturities": [0.5, 1.0],
            "mc": {{"n_paths": {n_paths}, "step": 0.00390625, "seed": 99, "n_max": 24}},
            "degeneracy": {{"levels": 6}},
            "tasks": [{tasks}]
        }}"#
    )
}

fn field(line: &str, k: usize) -> &str {
    line.split(',').nth(k).unwrap()
}

#[test]
fn bessel_european_rows_carry_references() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        &bessel_config(r#""eur", "default_prob""#, 5000),
    );
    let out = numeraire(&cfg, &[]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "task,i,j,T,estimate,stderr,reference,pass,note");
    assert_eq!(lines.len(), 5, "{text}");
    let eur_t1 = lines[2];
    assert_eq!(field(eur_t1, 0), "eur");
    assert_eq!(field(eur_t1, 3), "1");
    assert_eq!(field(eur_t1, 6), "0.3904515778");
    // default probability is under Q^1 = P, which never defaults
    assert_eq!(field(lines[3], 0), "default_prob");
    assert_eq!(field(lines[3], 6), "0");
    assert!(out.status.code() == Some(0) || out.status.code() == Some(1));
}

#[test]
fn output_is_independent_of_worker_count() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        &bessel_config(r#""eur", "amer", "parity_eur""#, 2000),
    );
    let runs: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|w| numeraire(&cfg, &["--workers", w]).stdout)
        .collect();
    assert!(!runs[0].is_empty());
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn seed_override_changes_estimates() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &bessel_config(r#""eur""#, 2000));
    let a = numeraire(&cfg, &[]).stdout;
    let b = numeraire(&cfg, &["--seed", "100"]).stdout;
    assert_ne!(a, b);
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let text = bessel_config(r#""eur""#, 2000).replace(r#""seed": 99, "#, "");
    let cfg = write(&dir, "c.json", &text);
    let out = numeraire(&cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("seed"), "{err}");
}

#[test]
fn more_risky_assets_than_factors_is_rejected() {
    let dir = TempDir::new().unwrap();
    let text = r#"{
        "model": {
            "x0": [0.0], "drift": ["0"], "diffusion": [["1"]], "rate": "0",
            "excess_return": ["0", "0"], "volatility": [["1"], ["0.5"]],
            "s0": [1.0, 1.0, 1.0],
            "exhaustion": {"domain_lower": ["-inf"], "domain_upper": ["inf"],
                           "lower": ["-n"], "upper": ["n"]}
        },
        "pair": [1, 2], "maturities": [1.0],
        "mc": {"n_paths": 100, "step": 0.25, "seed": 1, "n_max": 4},
        "tasks": ["eur"]
    }"#;
    let out = numeraire(&write(&dir, "c.json", text), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8(out.stderr).unwrap().is_empty());
}

#[test]
fn parity_rows_and_json_output_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        &bessel_config(
            r#""parity_eur", "parity_amer", "parity_mixed", "degeneracy""#,
            2000,
        ),
    );
    let out_path = dir.path().join("out.json");
    let out = numeraire(
        &cfg,
        &["--format", "json", "--out", out_path.to_str().unwrap()],
    );
    assert!(out.stdout.is_empty());
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let count = |task: &str| rows.iter().filter(|r| r["task"] == task).count();
    assert_eq!(count("parity_eur"), 2);
    assert_eq!(count("parity_amer"), 2);
    assert_eq!(count("degeneracy"), 1);
    // mixed rows are either both reports or one skipped marker per maturity
    let mixed =
        count("parity_mixed_amer_eur") + count("parity_mixed_eur_amer") + count("parity_mixed");
    assert!(mixed == 4 || count("parity_mixed") == 2);
    let failed = rows.iter().any(|r| r["pass"] == false);
    assert_eq!(out.status.code(), Some(if failed { 1 } else { 0 }));
}

#[test]
fn unreadable_config_exits_with_two() {
    let out = numeraire(Path::new("/nonexistent/config.json"), &[]);
    assert_eq!(out.status.code(), Some(2));
}
