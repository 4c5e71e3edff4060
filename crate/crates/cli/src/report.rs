//! CSV emission and re-parsing. Floats are written in Rust's shortest
//! round-trip form, so every file parses back to the exact in-memory values.

use std::path::Path;

use mmc_core::metrics::{Bin, CalibrationReport};
use mmc_core::training::EpisodeLog;

use crate::error::{CliError, Result};

fn f(v: f64) -> String {
    format!("{v:?}")
}

fn num<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| CliError::Config(format!("{}: column {i}: cannot parse {raw:?}", path.display())))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Config(format!("{}: {other:?}", path.display())),
    })
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Config(format!("{}: {other:?}", path.display())),
    })
}

/// One row of `report.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub head: String,
    pub dataset: String,
    pub seed: u64,
    pub mc_samples: usize,
    pub temperature: f64,
    pub mean_spread: f64,
    pub report: CalibrationReport,
}

/// AUPR treats in-distribution inputs as the positive class.
pub const REPORT_HEADER: [&str; 15] = [
    "head",
    "dataset",
    "seed",
    "mc_samples",
    "temperature",
    "episodes",
    "accuracy",
    "nll",
    "ece",
    "ood_ece",
    "auroc",
    "aupr_id_positive",
    "clamped",
    "mean_spread",
    "ece_bins",
];

const BIN_HEADER: [&str; 7] = ["run", "split", "lo", "hi", "count", "mean_confidence", "mean_accuracy"];

/// Writes `rows` to `path` and their bin tables to the sibling
/// `<stem>_bins.csv`.
pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        let m = &r.report;
        w.write_record([
            r.head.clone(),
            r.dataset.clone(),
            r.seed.to_string(),
            r.mc_samples.to_string(),
            f(r.temperature),
            m.episodes.to_string(),
            f(m.accuracy),
            f(m.nll),
            f(m.ece),
            f(m.ood_ece),
            f(m.auroc),
            f(m.aupr),
            m.clamped.to_string(),
            f(r.mean_spread),
            m.bins.len().to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;

    let bins_path = bins_path(path);
    let mut w = writer(&bins_path)?;
    w.write_record(BIN_HEADER)?;
    for (run, r) in rows.iter().enumerate() {
        for (split, bins) in [("id", &r.report.bins), ("ood", &r.report.ood_bins)] {
            for b in bins {
                w.write_record([
                    run.to_string(),
                    split.to_string(),
                    f(b.lo),
                    f(b.hi),
                    b.count.to_string(),
                    f(b.mean_confidence),
                    f(b.mean_accuracy),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(&bins_path, e))?;
    Ok(())
}

pub fn bins_path(report: &Path) -> std::path::PathBuf {
    let stem = report.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    report.with_file_name(format!("{stem}_bins.csv"))
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for rec in reader(path)?.records() {
        let rec = rec?;
        rows.push(ReportRow {
            head: rec.get(0).unwrap_or("").to_string(),
            dataset: rec.get(1).unwrap_or("").to_string(),
            seed: num(&rec, 2, path)?,
            mc_samples: num(&rec, 3, path)?,
            temperature: num(&rec, 4, path)?,
            mean_spread: num(&rec, 13, path)?,
            report: CalibrationReport {
                episodes: num(&rec, 5, path)?,
                accuracy: num(&rec, 6, path)?,
                nll: num(&rec, 7, path)?,
                ece: num(&rec, 8, path)?,
                ood_ece: num(&rec, 9, path)?,
                auroc: num(&rec, 10, path)?,
                aupr: num(&rec, 11, path)?,
                clamped: num(&rec, 12, path)?,
                bins: Vec::new(),
                ood_bins: Vec::new(),
            },
        });
    }
    let bins_path = bins_path(path);
    for rec in reader(&bins_path)?.records() {
        let rec = rec?;
        let run: usize = num(&rec, 0, &bins_path)?;
        let row = rows
            .get_mut(run)
            .ok_or_else(|| CliError::Config(format!("{}: bin row for unknown run {run}", bins_path.display())))?;
        let bin = Bin {
            lo: num(&rec, 2, &bins_path)?,
            hi: num(&rec, 3, &bins_path)?,
            count: num(&rec, 4, &bins_path)?,
            mean_confidence: num(&rec, 5, &bins_path)?,
            mean_accuracy: num(&rec, 6, &bins_path)?,
        };
        match rec.get(1) {
            Some("id") => row.report.bins.push(bin),
            Some("ood") => row.report.ood_bins.push(bin),
            other => return Err(CliError::Config(format!("{}: unknown split {other:?}", bins_path.display()))),
        }
    }
    Ok(rows)
}

/// Training log row: the episode's loss and accuracy plus the running
/// (cumulative) mean accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub episode: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub running_accuracy: f64,
    pub skipped: bool,
}

pub fn log_rows(log: &[EpisodeLog]) -> Vec<LogRow> {
    let mut sum = 0.0;
    log.iter()
        .enumerate()
        .map(|(i, e)| {
            sum += e.accuracy;
            LogRow {
                episode: e.episode,
                loss: e.loss,
                accuracy: e.accuracy,
                running_accuracy: sum / (i + 1) as f64,
                skipped: e.skipped,
            }
        })
        .collect()
}

pub fn write_train_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["episode", "loss", "accuracy", "running_accuracy", "skipped"])?;
    for r in rows {
        w.write_record([r.episode.to_string(), f(r.loss), f(r.accuracy), f(r.running_accuracy), r.skipped.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_train_log(path: &Path) -> Result<Vec<LogRow>> {
    reader(path)?
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok(LogRow {
                episode: num(&rec, 0, path)?,
                loss: num(&rec, 1, path)?,
                accuracy: num(&rec, 2, path)?,
                running_accuracy: num(&rec, 3, path)?,
                skipped: num(&rec, 4, path)?,
            })
        })
        .collect()
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregated suite row: per metric, mean and std over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub model: String,
    pub seeds: usize,
    /// In [`TABLE_METRICS`] order.
    pub cells: Vec<(f64, f64)>,
}

pub const TABLE_METRICS: [&str; 7] = ["accuracy", "nll", "ece", "ood_ece", "aupr_id_positive", "auroc", "mean_spread"];

pub fn write_table(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["model".to_string(), "seeds".to_string()];
    for m in TABLE_METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.model.clone(), r.seeds.to_string()];
        for (m, s) in &r.cells {
            rec.push(f(*m));
            rec.push(f(*s));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Vec<TableRow>> {
    reader(path)?
        .records()
        .map(|rec| {
            let rec = rec?;
            let cells = (0..TABLE_METRICS.len())
                .map(|k| Ok((num(&rec, 2 + 2 * k, path)?, num(&rec, 3 + 2 * k, path)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(TableRow { model: rec.get(0).unwrap_or("").to_string(), seeds: num(&rec, 1, path)?, cells })
        })
        .collect()
}
