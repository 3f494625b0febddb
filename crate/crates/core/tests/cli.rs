use std::path::Path;
use std::process::{Command, Output};

use epicscore::data::NoiseConvention;
use epicscore::experiment::{reports_from_csv, DatasetSpec, ExperimentConfig, ExperimentReport};

fn epicscore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epicscore")).args(args).env("EPIC_THREADS", "2").output().unwrap()
}

fn write_config(dir: &Path, methods: &[&str], runs: usize) -> String {
    let mut cfg = ExperimentConfig::new(DatasetSpec::Bimodal { n: 500, convention: NoiseConvention::Sd }, methods);
    cfg.n_runs = runs;
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.canonical_json().unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("blobs.csv");
    let o = epicscore(&["simulate", "--dataset", "blobs", "--n", "300", "--classes", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out).unwrap().lines().count(), 301);
}

#[test]
fn unknown_method_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &["reg_split", "epic_nope"], 1);
    let o = epicscore(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epic_nope"), "{}", stderr(&o));
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &["reg_split"], 1);
    assert_eq!(epicscore(&["run", "--config", &cfg, "--alpha", "1.5"]).status.code(), Some(2));
    let missing = dir.path().join("absent.json");
    assert_eq!(epicscore(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(epicscore(&["run"]).status.code(), Some(2));
}

#[test]
fn aggregate_rejects_mixed_configs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &["reg_split"], 1);
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for (seed, out) in [("1", &a), ("2", &b)] {
        let o = epicscore(&["run", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = epicscore(&["aggregate", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let same = epicscore(&["aggregate", a.to_str().unwrap(), a.to_str().unwrap(), "--format", "csv"]);
    assert!(same.status.success(), "{}", stderr(&same));
    assert!(String::from_utf8_lossy(&same.stdout).contains("reg_split"));
}

#[test]
fn band_dump_has_one_row_per_test_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &["reg_split"], 1);
    let o = epicscore(&["bands", "--config", &cfg, "--method", "epic_knn"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x0,lo,hi,y,covered");
    assert_eq!(lines.count(), 100);
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn close_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b),
        (a, b) => a.is_none() && b.is_none(),
    }
}

#[test]
fn json_and_csv_reports_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &["reg_split", "cqr", "epic_knn"], 3);
    let json = epicscore(&["run", "--config", &cfg]);
    let csv = epicscore(&["run", "--config", &cfg, "--format", "csv"]);
    assert!(json.status.success() && csv.status.success());
    let report: ExperimentReport = serde_json::from_slice(&json.stdout).unwrap();
    let rows = reports_from_csv(std::str::from_utf8(&csv.stdout).unwrap()).unwrap();
    assert_eq!(rows.len(), report.reports.len());
    assert!(std::str::from_utf8(&csv.stdout).unwrap().lines().skip(1).all(|l| l.starts_with(&report.config_hash)));
    for r in &rows {
        let j = report.reports.iter().find(|j| j.method == r.method && j.run == r.run).unwrap();
        assert!(close(j.amc, r.amc) && close_opt(j.aisl, r.aisl) && close_opt(j.mean_il, r.mean_il));
        assert!(close_opt(j.pearson_rho, r.pearson_rho) && close_opt(j.ssc, r.ssc));
        assert_eq!((j.seed, j.n_test, j.n_cal2, j.n_degenerate), (r.seed, r.n_test, r.n_cal2, r.n_degenerate));
    }
    // the JSON text itself is stable
    let again = epicscore(&["run", "--config", &cfg]);
    assert_eq!(json.stdout, again.stdout);
}
