//! CSV readers and writers for datasets, histories, reports and tidy results.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! read back is bit-identical. Missing values are written as `NA`.

use std::io::Write;
use std::path::Path;

use edl_core::eval::ExperimentResult;
use edl_core::{History, LabeledSet, Points, UqReport};

use crate::error::{LabError, Result};

pub const NA: &str = "NA";
pub const TIDY_HEADER: [&str; 8] = ["task", "loss", "lambda", "n_train", "seed", "metric", "value", "runtime_s"];

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |v| v.to_string())
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> LabError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LabError::io(path, io),
        other => LabError::format(path, format!("{other:?}")),
    }
}

fn finish(path: &Path, mut w: csv::Writer<std::fs::File>) -> Result<()> {
    w.flush().map_err(|e| LabError::io(path, e))
}

fn point_header(dim: usize) -> Vec<String> {
    (0..dim).map(|j| format!("x{j}")).collect()
}

/// `x0,x1,...,y` as bytes.
pub fn labeled_bytes(set: &LabeledSet) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = point_header(set.dim());
    header.push("y".into());
    w.write_record(&header).expect("in-memory write");
    for i in 0..set.len() {
        let mut rec: Vec<String> = set.x(i).iter().map(|v| v.to_string()).collect();
        rec.push(set.y(i).to_string());
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_labeled(path: &Path, set: &LabeledSet) -> Result<()> {
    write_bytes(path, &labeled_bytes(set))
}

/// `x0,x1,...` without labels.
pub fn write_points(path: &Path, points: &Points) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(point_header(points.dim())).map_err(|e| csv_err(path, e))?;
    for row in points.rows() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| LabError::format(path, format!("line {line}: `{s}` is not a number")))
}

/// Reads a labeled CSV written by [`write_labeled`]; labels must be below `classes`.
pub fn read_labeled(path: &Path, classes: usize) -> Result<LabeledSet> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let dim = header.len().checked_sub(1).filter(|&d| d > 0);
    let dim = match dim {
        Some(d) if header.iter().take(d).eq(point_header(d).iter().map(String::as_str)) && &header[d] == "y" => d,
        _ => return Err(LabError::format(path, "expected header x0,...,y")),
    };
    let (mut flat, mut labels) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        for j in 0..dim {
            flat.push(parse_f64(path, line, &rec[j])?);
        }
        let y = rec[dim]
            .trim()
            .parse::<usize>()
            .map_err(|_| LabError::format(path, format!("line {line}: bad label `{}`", &rec[dim])))?;
        labels.push(y);
    }
    Ok(LabeledSet::new(Points::new(dim, flat)?, labels, classes)?)
}

/// `epoch,train_loss,val_loss,val_acc`.
pub fn write_history(path: &Path, history: &History) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "val_acc"]).map_err(|e| csv_err(path, e))?;
    for r in &history.records {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), fmt_opt(r.val_loss), fmt_opt(r.val_acc)])
            .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// One row per sample under [`UqReport::CSV_HEADER`].
pub fn write_reports(path: &Path, reports: &[UqReport]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(UqReport::CSV_HEADER.split(',')).map_err(|e| csv_err(path, e))?;
    for (i, r) in reports.iter().enumerate() {
        w.write_record([
            i.to_string(),
            r.mi.to_string(),
            fmt_opt(r.dent),
            r.ent.to_string(),
            r.maxp.to_string(),
            r.aleatoric.to_string(),
            fmt_opt(r.energy),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Sort key of a result: loss, λ, N, seed. Missing λ sorts first.
fn config_key(r: &ExperimentResult) -> (String, u64, usize, u64) {
    let lambda_bits = r.lambda.map_or(0, |l| l.to_bits());
    (r.loss.clone(), lambda_bits, r.n_train, r.seed)
}

/// Tidy rows `task,loss,lambda,n_train,seed,metric,value,runtime_s`, sorted
/// by configuration so the bytes do not depend on job completion order.
pub fn tidy_bytes(results: &[ExperimentResult], record_runtime: bool) -> Vec<u8> {
    let mut sorted: Vec<&ExperimentResult> = results.iter().collect();
    sorted.sort_by_key(|r| config_key(r));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TIDY_HEADER).expect("in-memory write");
    for r in sorted {
        let runtime = if record_runtime { r.runtime_s.to_string() } else { NA.to_string() };
        for row in &r.rows {
            w.write_record([
                row.task.as_str(),
                r.loss.as_str(),
                &fmt_opt(r.lambda),
                &r.n_train.to_string(),
                &r.seed.to_string(),
                row.metric.as_str(),
                &fmt_opt(row.value),
                &runtime,
            ])
            .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_tidy(path: &Path, results: &[ExperimentResult], record_runtime: bool) -> Result<()> {
    write_bytes(path, &tidy_bytes(results, record_runtime))
}

/// Writes through a sibling temporary file and renames, so readers never see
/// a partial file.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let mut f = std::fs::File::create(&tmp).map_err(|e| LabError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| LabError::io(&tmp, e))?;
    f.sync_all().map_err(|e| LabError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}
