//! CSV tables, plot data and the JSON manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use rmfgp::data::{format_f64, RNG_ALGORITHM};

use crate::error::BenchError;
use crate::runner::{CellRecord, ExperimentReport, Method};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, BenchError> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_path(path)?)
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), BenchError> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn table(report: &ExperimentReport, metric: fn(&CellRecord) -> Option<f64>) -> (Vec<String>, Vec<Vec<String>>) {
    let n_high = &report.config.n_high;
    let mut header = vec!["method".to_string()];
    header.extend(n_high.iter().map(|n| format!("N_H={n}")));
    let rows = Method::TABLE_ROWS
        .iter()
        .map(|&m| {
            let mut row = vec![m.label().to_string()];
            row.extend(n_high.iter().map(|&n| opt(report.average(m, n, metric))));
            row
        })
        .collect();
    (header, rows)
}

/// Writes every CSV of `report` into `dir` and returns the file names.
pub fn write_csvs(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut emit = |name: &str, header: Vec<String>, rows: Vec<Vec<String>>| -> Result<(), BenchError> {
        write_rows(&dir.join(name), &header, &rows)?;
        files.push(PathBuf::from(name));
        Ok(())
    };

    let rows = report
        .records
        .iter()
        .map(|r| {
            vec![
                report.config.problem.clone(),
                r.method.key().to_string(),
                r.seed.to_string(),
                r.n_high.to_string(),
                opt(r.m),
                opt(r.relative_error),
                opt(r.mse),
                r.d_hat.map(|d| d.to_string()).unwrap_or_default(),
                r.degenerate.to_string(),
            ]
        })
        .collect();
    emit(
        "records.csv",
        strings(&["problem", "method", "seed", "n_high", "m", "relative_error", "mse", "d_hat", "degenerate"]),
        rows,
    )?;

    let (header, rows) = table(report, |r| r.m);
    emit("table_m.csv", header, rows)?;
    let (header, rows) = table(report, |r| r.relative_error);
    emit("table_e.csv", header, rows)?;

    let mut rows = Vec::new();
    for &n in &report.config.n_high {
        for m in Method::TABLE_ROWS {
            if let Some(v) = report.average(m, n, |r| r.mse) {
                rows.push(vec![
                    n.to_string(),
                    m.key().to_string(),
                    format_f64(v),
                    opt(report.average(m, n, |r| r.relative_error)),
                ]);
            }
        }
    }
    emit("mse.csv", strings(&["n_high", "method", "mse", "relative_error"]), rows)?;

    let mut rows = Vec::new();
    let bic_rows = report
        .reference_bic
        .iter()
        .map(|b| ("reference".to_string(), String::new(), b))
        .chain(report.bic.iter().map(|b| (b.seed.to_string(), b.n_high.to_string(), &b.bic)));
    for (seed, n_high, bic) in bic_rows {
        for (k, (g, gn)) in bic.g.iter().zip(&bic.g_normalized).enumerate() {
            rows.push(vec![
                seed.clone(),
                n_high.clone(),
                (k + 1).to_string(),
                format_f64(*g),
                format_f64(*gn),
                bic.d_hat.to_string(),
            ]);
        }
    }
    emit("bic.csv", strings(&["seed", "n_high", "k", "g", "g_normalized", "d_hat"]), rows)?;

    if let Some(plot) = &report.plot {
        let mut header = strings(&["index", "exact"]);
        header.extend(plot.predictions.iter().map(|(m, _)| m.key().to_string()));
        let rows = (0..plot.exact.len())
            .map(|i| {
                let mut row = vec![i.to_string(), format_f64(plot.exact[i])];
                row.extend(plot.predictions.iter().map(|(_, p)| format_f64(p[i])));
                row
            })
            .collect();
        emit("correlation.csv", header, rows)?;

        if let Some((_, pred)) = plot.predictions.iter().find(|(m, _)| *m == Method::RmfgpFlag1) {
            let mut header = vec!["index".to_string()];
            header.extend((1..=plot.projected.len()).map(|k| format!("x_d{k}")));
            header.extend(strings(&["exact", "rmfgp_flag1"]));
            let rows = (0..plot.exact.len())
                .map(|i| {
                    let mut row = vec![i.to_string()];
                    row.extend(plot.projected.iter().map(|c| format_f64(c[i])));
                    row.push(format_f64(plot.exact[i]));
                    row.push(format_f64(pred[i]));
                    row
                })
                .collect();
            emit("prediction_xd.csv", header, rows)?;
        }
    }

    if let Some(up) = &report.up {
        if !up.per_seed.is_empty() {
            let (r, b) = up.averaged();
            let rows = (0..up.grid.len())
                .map(|k| {
                    vec![
                        k.to_string(),
                        format_f64(up.grid[k]),
                        format_f64(up.truth.mean[k]),
                        format_f64(r.mean[k]),
                        format_f64(b.mean[k]),
                        format_f64(up.truth.std[k]),
                        format_f64(r.std[k]),
                        format_f64(b.std[k]),
                    ]
                })
                .collect();
            emit(
                "up.csv",
                strings(&[
                    "x_index",
                    "x",
                    "mean_truth",
                    "mean_rmfgp",
                    "mean_baseline",
                    "std_truth",
                    "std_rmfgp",
                    "std_baseline",
                ]),
                rows,
            )?;

            let mut rows = Vec::new();
            for s in &up.per_seed {
                for k in 0..up.grid.len() {
                    rows.push(vec![
                        s.seed.to_string(),
                        k.to_string(),
                        format_f64(s.rmfgp.mean[k]),
                        format_f64(s.baseline.mean[k]),
                        format_f64(s.rmfgp.std[k]),
                        format_f64(s.baseline.std[k]),
                    ]);
                }
            }
            emit(
                "up_per_seed.csv",
                strings(&["seed", "x_index", "mean_rmfgp", "mean_baseline", "std_rmfgp", "std_baseline"]),
                rows,
            )?;
        }
    }
    Ok(files)
}

#[derive(Serialize)]
struct FileEntry {
    name: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    software: &'static str,
    version: &'static str,
    rng: &'static str,
    status: &'a str,
    config_sha256: String,
    config: &'a crate::config::ExperimentConfig,
    seeds: &'a [u64],
    reference_d: usize,
    files: Vec<FileEntry>,
    cells: &'a [CellRecord],
    timing: &'a [crate::runner::Timing],
}

/// Canonical hash of a configuration: SHA-256 of its compact JSON form.
pub fn config_hash(config: &crate::config::ExperimentConfig) -> Result<String, BenchError> {
    Ok(sha256_hex(serde_json::to_string(config)?.as_bytes()))
}

/// Writes the CSVs and `manifest.json`; on failure also `failure.json`.
pub fn write_report(report: &ExperimentReport, dir: &Path, failure: Option<&BenchError>) -> Result<(), BenchError> {
    let names = write_csvs(report, dir)?;
    let mut files = Vec::new();
    for name in names {
        let bytes = std::fs::read(dir.join(&name))?;
        files.push(FileEntry {
            name: name.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        software: env!("CARGO_PKG_NAME"),
        version: VERSION,
        rng: RNG_ALGORITHM,
        status: if failure.is_some() { "failed" } else { "complete" },
        config_sha256: config_hash(&report.config)?,
        config: &report.config,
        seeds: &report.config.seeds,
        reference_d: report.reference_d,
        files,
        cells: &report.records,
        timing: &report.timing,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    if let Some(e) = failure {
        let record = serde_json::json!({
            "error": e.to_string(),
            "completed_cells": report.records.len(),
            "config_sha256": config_hash(&report.config)?,
        });
        std::fs::write(dir.join("failure.json"), serde_json::to_string_pretty(&record)?)?;
    }
    Ok(())
}
