use std::path::Path;
use std::process::Command;

use rmfgp_bench::config::SCHEMA;
use rmfgp_bench::output::sha256_hex;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rmfgp-bench"));
    cmd.env_remove(rmfgp_bench::OUT_ENV).env("RUST_LOG", "warn");
    cmd
}

fn small_config() -> serde_json::Value {
    serde_json::json!({
        "schema_version": 1,
        "problem": "linear",
        "n_low": 40,
        "n_test": 30,
        "n_high": [10, 12],
        "batch_sizes": [2],
        "flags": [0, 1],
        "s": 3,
        "slices": 10,
        "n_mc": 20,
        "sdr_samples": 300,
        "seeds": [0, 1],
        "baselines": ["gp", "gp_save", "pure_save"],
        "plot_n_high": 12
    })
}

fn write_config(dir: &Path, value: &serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn schema_subcommand_prints_published_schema() {
    let out = bin().arg("schema").output().unwrap();
    assert!(out.status.success());
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed, serde_json::from_str::<serde_json::Value>(SCHEMA).unwrap());
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cases = Vec::new();
    let mut too_large = small_config();
    too_large["n_high"] = serde_json::json!([50]);
    cases.push(too_large);
    let mut unknown = small_config();
    unknown["extra"] = serde_json::json!(1);
    cases.push(unknown);
    let mut bad_flag = small_config();
    bad_flag["flags"] = serde_json::json!([2]);
    cases.push(bad_flag);
    let mut short_start = small_config();
    short_start["batch_sizes"] = serde_json::json!([5, 5]);
    cases.push(short_start);
    for case in &cases {
        let path = write_config(tmp.path(), case);
        let out = bin().args(["run"]).arg(&path).arg("--out").arg(tmp.path()).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{case}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = bin().args(["run", "--problem", "unknown"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["run", "missing.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("linear").exists());
}

#[test]
fn runtime_failure_keeps_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config();
    // too few generated points for the re-rotation SAVE on six inputs
    config["sdr_samples"] = serde_json::json!(3);
    let path = write_config(tmp.path(), &config);
    let out = bin().arg("run").arg(&path).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let dir = tmp.path().join("linear");
    let failure: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("failure.json")).unwrap()).unwrap();
    assert!(failure["error"].as_str().unwrap().contains("acquisition loop"));
    let (_, rows) = read_csv(&dir.join("records.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1], "pure_save");
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
}

#[test]
fn run_writes_tables_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), &small_config());
    let before = sha256_hex(&std::fs::read(&path).unwrap());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out_dir in [&a, &b] {
        let out = bin().arg("run").arg(&path).arg("--out").arg(out_dir).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(sha256_hex(&std::fs::read(&path).unwrap()), before);
    let (a, b) = (a.join("linear"), b.join("linear"));
    let first = csv_bytes(&a);
    assert_eq!(first, csv_bytes(&b));
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        ["bic.csv", "correlation.csv", "mse.csv", "prediction_xd.csv", "records.csv", "table_e.csv", "table_m.csv"]
    );

    let (header, rows) = read_csv(&a.join("table_e.csv"));
    assert_eq!(header, ["method", "N_H=10", "N_H=12"]);
    let labels: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(labels, ["RMFGP flag=0", "GP", "RMFGP flag=1", "GP-SAVE"]);
    let (_, m_rows) = read_csv(&a.join("table_m.csv"));
    assert!(m_rows[1][1].is_empty(), "plain GP has no subspace");

    // every table entry is the mean of the per-seed records
    let (_, records) = read_csv(&a.join("records.csv"));
    for (row, key) in rows.iter().zip(["rmfgp_flag0", "gp", "rmfgp_flag1", "gp_save"]) {
        for (col, n) in ["10", "12"].iter().enumerate() {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| r[1] == key && r[3] == *n)
                .map(|r| r[5].parse().unwrap())
                .collect();
            assert_eq!(values.len(), 2);
            let mean = values.iter().sum::<f64>() / 2.0;
            let table: f64 = row[col + 1].parse().unwrap();
            assert!((table - mean).abs() <= 1e-15 * mean.abs(), "{key} {n}");
        }
    }
    // seventeen significant digits round-trip
    let v: f64 = rows[0][1].parse().unwrap();
    assert_eq!(rmfgp::data::format_f64(v), rows[0][1]);

    let (_, mse) = read_csv(&a.join("mse.csv"));
    assert_eq!(mse.len(), 2 * 4);
    let (header, corr) = read_csv(&a.join("correlation.csv"));
    assert_eq!(corr.len(), 30);
    assert_eq!(header, ["index", "exact", "rmfgp_flag0", "gp", "rmfgp_flag1", "gp_save"]);
    let (_, pred) = read_csv(&a.join("prediction_xd.csv"));
    assert_eq!(pred.len(), 30);
    assert_eq!(records.iter().filter(|r| r[1] == "pure_save").count(), 2);

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1]));
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["cells"].as_array().unwrap().len(), records.len());
    for entry in manifest["files"].as_array().unwrap() {
        let bytes = std::fs::read(a.join(entry["name"].as_str().unwrap())).unwrap();
        assert_eq!(entry["sha256"], sha256_hex(&bytes));
    }
}

#[test]
fn output_root_from_environment_and_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config["n_high"] = serde_json::json!([10]);
    config["seeds"] = serde_json::json!([3]);
    config["baselines"] = serde_json::json!([]);
    config["flags"] = serde_json::json!([0]);
    config["plot_n_high"] = serde_json::Value::Null;
    let path = write_config(tmp.path(), &config);
    let env_root = tmp.path().join("env");
    let out = bin().arg("run").arg(&path).env(rmfgp_bench::OUT_ENV, &env_root).output().unwrap();
    assert!(out.status.success());
    assert!(env_root.join("linear/records.csv").exists());
    let flag_root = tmp.path().join("flag");
    let out = bin()
        .arg("run")
        .arg(&path)
        .args(["--seed-override", "4,5"])
        .arg("--out")
        .arg(&flag_root)
        .env(rmfgp_bench::OUT_ENV, tmp.path().join("ignored"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(!tmp.path().join("ignored").exists());
    let (_, rows) = read_csv(&flag_root.join("linear/records.csv"));
    let seeds: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(seeds, ["4", "5"]);
}

#[test]
fn uncertainty_curves_have_grid_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "schema_version": 1,
        "problem": "advection",
        "n_low": 40,
        "n_test": 30,
        "n_high": [12],
        "batch_sizes": [2],
        "flags": [1],
        "s": 3,
        "slices": 10,
        "n_mc": 20,
        "sdr_samples": 300,
        "seeds": [0],
        "baselines": ["gp_save"],
        "up": { "n_high": 12, "grid_points": 7, "n_xi": 40, "n_truth": 200 }
    });
    let path = write_config(tmp.path(), &config);
    let out = bin().arg("run").arg(&path).arg("--out").arg(tmp.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&tmp.path().join("advection/up.csv"));
    assert_eq!(
        header,
        ["x_index", "x", "mean_truth", "mean_rmfgp", "mean_baseline", "std_truth", "std_rmfgp", "std_baseline"]
    );
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[6][1].parse::<f64>().unwrap(), 1.0);
}
