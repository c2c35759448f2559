use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use entfilter_cli::{read_csv, COMPARE_HEADER, FIG4_HEADER, TABLE1_HEADER};

fn entfilter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entfilter"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn compare_writes_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = entfilter(&["--out", dir.path().to_str().unwrap(), "compare"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (header, rows) = read_csv(&fs::read_to_string(dir.path().join("compare.csv")).unwrap());
    assert_eq!(header, COMPARE_HEADER);
    assert_eq!(rows.len(), 33);
    assert_eq!(rows[0][0], "0");
    assert_eq!(rows[32][0], "8");
}

#[test]
fn fig4_with_explicit_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = entfilter(&[
        "--out",
        d,
        "fig4",
        "--eps",
        "0.2,0.8",
        "--resamples",
        "5",
        "--counts",
        "1000",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(dir.path().join("fig4.csv")).unwrap();
    assert!(text.contains("# command: fig4\n"));
    let (header, rows) = read_csv(&text);
    assert_eq!(header, FIG4_HEADER);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][0], "0.8");
    let meta = json(&dir.path().join("fig4_meta.json"));
    assert_eq!(meta["manifest"]["command"], "fig4");
    assert!(meta["manifest"]["timestamp_unix"].as_u64().unwrap() > 0);
    assert_eq!(meta["base"]["counts_per_setting"], 1000);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"counts_per_setting": 1500, "seed": 5, "bootstrap_resamples": 4}"#,
    )
    .unwrap();
    let d = dir.path().to_str().unwrap();
    let c = cfg.to_str().unwrap();
    let out = entfilter(&[
        "--config", c, "--out", d, "fig4", "--eps", "0.5", "--counts", "900",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let meta = json(&dir.path().join("fig4_meta.json"));
    assert_eq!(meta["base"]["counts_per_setting"], 900);
    assert_eq!(meta["base"]["bootstrap_resamples"], 4);
    assert_eq!(meta["manifest"]["master_seed"], 5);
    assert_eq!(meta["manifest"]["config_path"], c);
}

#[test]
fn single_case_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = entfilter(&["--out", d, "table1", "--case", "III", "--resamples", "5"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (header, rows) = read_csv(&fs::read_to_string(dir.path().join("table1.csv")).unwrap());
    assert_eq!(header, TABLE1_HEADER);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "III");
    assert_eq!(rows[0][12], "true");
    let table = json(&dir.path().join("table1.json"));
    assert_eq!(table["reports"].as_array().unwrap().len(), 1);
}

#[test]
fn tomo_writes_density_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = entfilter(&[
        "--out",
        d,
        "tomo",
        "--stage",
        "output",
        "--bs2-theta1-deg",
        "7.2",
        "--bs2-theta2-deg",
        "-18.6",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics = json(&dir.path().join("tomo_output_metrics.json"));
    let theta = metrics["exact"]["theta_fit_over_pi"].as_f64().unwrap();
    assert!((theta - 25.8 / 180.0).abs() < 1e-6);
    let density = json(&dir.path().join("tomo_output_density.json"));
    assert_eq!(density["dataset"]["counts"].as_array().unwrap().len(), 16);
    assert_eq!(density["manifest"]["command"], "tomo");
}

#[test]
fn validate_prints_normalized_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"channel": {"eps": 0.5}}"#).unwrap();
    let out = entfilter(&["--config", cfg.to_str().unwrap(), "validate"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let gamma = v["channel"]["gamma"].as_f64().unwrap();
    assert!((gamma - 2f64.ln()).abs() < 1e-12);
    assert_eq!(v["counts_per_setting"], 4000);
}

#[test]
fn usage_and_config_errors_exit_2() {
    let missing = entfilter(&["--config", "/definitely/not/here.json", "validate"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/definitely/not/here.json"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"countz": 3}"#).unwrap();
    assert_eq!(
        entfilter(&["--config", cfg.to_str().unwrap(), "validate"])
            .status
            .code(),
        Some(2)
    );

    assert_eq!(
        entfilter(&["tomo", "--stage", "middle"]).status.code(),
        Some(2)
    );
    assert_eq!(entfilter(&["fig4", "--eps", "1.0"]).status.code(), Some(2));
    assert_eq!(entfilter(&["table1", "--case", "V"]).status.code(), Some(2));
    assert_eq!(entfilter(&[]).status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = entfilter(&["--out", blocker.join("sub").to_str().unwrap(), "compare"]);
    assert_eq!(out.status.code(), Some(1));
}
