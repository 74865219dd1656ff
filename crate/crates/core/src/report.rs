//! Per-tensor and grouped summaries of a quantized model.
//!
//! The JSON form is stable: field names and nesting only change together
//! with `REPORT_VERSION`.

use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::read_quantized;
use crate::model::{EntryKind, QuantizedEntry, QuantizedManifest};
use crate::types::{ErrorSummary, QuantizedWeight};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRow {
    pub name: String,
    pub rows: usize,
    pub cols: Option<usize>,
    pub kind: EntryKind,
    pub role: Option<String>,
    pub layer: Option<u32>,
    pub elements: usize,
    pub outlier_count: usize,
    pub outlier_fraction: f64,
    /// `None` when the errors were not recorded, e.g. a bare `.ezqt` file.
    pub rtn_error: Option<f64>,
    pub final_error: Option<f64>,
    pub reduction_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub key: String,
    pub tensors: usize,
    pub elements: usize,
    pub outlier_count: usize,
    pub outlier_fraction: f64,
    pub rtn_error: f64,
    pub final_error: f64,
    pub reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    /// `role`, `layer`, or the user-supplied pattern.
    pub by: String,
    pub groups: Vec<GroupRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub tensors: Vec<TensorRow>,
    pub totals: GroupRow,
    pub groupings: Vec<Grouping>,
}

fn tensor_row(entry: &QuantizedEntry, errors: Option<ErrorSummary>) -> TensorRow {
    let elements = entry.len();
    let outlier_count = entry.outlier_count.unwrap_or(0);
    TensorRow {
        name: entry.name.clone(),
        rows: entry.rows,
        cols: entry.cols,
        kind: entry.kind,
        role: entry.role.clone(),
        layer: entry.layer,
        elements,
        outlier_count,
        outlier_fraction: outlier_count as f64 / elements.max(1) as f64,
        rtn_error: errors.map(|e| e.rtn_error),
        final_error: errors.map(|e| e.final_error),
        reduction_pct: errors.map(|e| e.reduction_pct()),
    }
}

fn aggregate<'a>(key: String, rows: impl IntoIterator<Item = &'a TensorRow>) -> GroupRow {
    let mut g = GroupRow {
        key,
        tensors: 0,
        elements: 0,
        outlier_count: 0,
        outlier_fraction: 0.0,
        rtn_error: 0.0,
        final_error: 0.0,
        reduction_pct: 0.0,
    };
    for r in rows {
        g.tensors += 1;
        g.elements += r.elements;
        g.outlier_count += r.outlier_count;
        g.rtn_error += r.rtn_error.unwrap_or(0.0);
        g.final_error += r.final_error.unwrap_or(0.0);
    }
    g.outlier_fraction = g.outlier_count as f64 / g.elements.max(1) as f64;
    g.reduction_pct = ErrorSummary {
        rtn_error: g.rtn_error,
        final_error: g.final_error,
    }
    .reduction_pct();
    g
}

/// Groups quantized rows by `key`, keeping first-appearance order.
/// Rows with no key are left out.
fn group_by(by: &str, rows: &[TensorRow], key: impl Fn(&TensorRow) -> Option<String>) -> Grouping {
    let mut keys: Vec<String> = Vec::new();
    let mut members: Vec<Vec<&TensorRow>> = Vec::new();
    for r in rows.iter().filter(|r| r.kind == EntryKind::Quantized) {
        let Some(k) = key(r) else { continue };
        match keys.iter().position(|x| *x == k) {
            Some(i) => members[i].push(r),
            None => {
                keys.push(k);
                members.push(vec![r]);
            }
        }
    }
    Grouping {
        by: by.to_string(),
        groups: keys
            .into_iter()
            .zip(members)
            .map(|(k, m)| aggregate(k, m))
            .collect(),
    }
}

fn build(tensors: Vec<TensorRow>, patterns: &[String]) -> Result<Report> {
    let mut groupings = vec![
        group_by("role", &tensors, |r| r.role.clone()),
        group_by("layer", &tensors, |r| r.layer.map(|l| l.to_string())),
    ];
    for p in patterns {
        let re = Regex::new(p).map_err(|e| Error::InvalidConfig(format!("group pattern: {e}")))?;
        groupings.push(group_by(p, &tensors, |r| {
            let caps = re.captures(&r.name)?;
            let m = caps.get(1).or_else(|| caps.get(0))?;
            Some(m.as_str().to_string())
        }));
    }
    groupings.retain(|g| !g.groups.is_empty());
    let totals = aggregate(
        "total".into(),
        tensors.iter().filter(|r| r.kind == EntryKind::Quantized),
    );
    Ok(Report {
        version: REPORT_VERSION,
        tensors,
        totals,
        groupings,
    })
}

/// Report for a quantized model directory.
pub fn model_report(dir: &Path, patterns: &[String]) -> Result<Report> {
    let qm = QuantizedManifest::load_dir(dir)?;
    build(
        qm.tensors.iter().map(|e| tensor_row(e, e.errors)).collect(),
        patterns,
    )
}

/// Report for a single `.ezqt` file. Errors are not stored in the file, so
/// only outlier statistics are filled in.
pub fn file_report(path: &Path) -> Result<Report> {
    let q = read_quantized(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    build(vec![weight_row(&name, &q)], &[])
}

pub fn weight_row(name: &str, q: &QuantizedWeight) -> TensorRow {
    let entry = QuantizedEntry {
        name: name.into(),
        rows: q.rows,
        cols: Some(q.cols),
        kind: EntryKind::Quantized,
        file: String::new(),
        role: None,
        layer: None,
        outlier_count: Some(q.outliers.len()),
        errors: q.errors,
    };
    tensor_row(&entry, q.errors)
}

/// Directory or single file, whichever `path` is.
pub fn inspect(path: &Path, patterns: &[String]) -> Result<Report> {
    if path.is_dir() {
        model_report(path, patterns)
    } else {
        file_report(path)
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    match v {
        Some(v) => format!("{v:.prec$}"),
        None => "-".into(),
    }
}

fn write_group(f: &mut fmt::Formatter<'_>, g: &GroupRow, width: usize) -> fmt::Result {
    writeln!(
        f,
        "{:<width$} {:>4} {:>12} {:>8} {:>8.4}% {:>14.6} {:>14.6} {:>7.2}%",
        g.key,
        g.tensors,
        g.elements,
        g.outlier_count,
        g.outlier_fraction * 100.0,
        g.rtn_error,
        g.final_error,
        g.reduction_pct
    )
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .tensors
            .iter()
            .map(|t| t.name.len())
            .chain([6])
            .max()
            .unwrap_or(6);
        writeln!(
            f,
            "{:<width$} {:>11} {:>11} {:>8} {:>9} {:>14} {:>14} {:>8}",
            "tensor", "shape", "kind", "outliers", "fraction", "rtn_error", "final_error", "reduct"
        )?;
        for t in &self.tensors {
            let shape = match t.cols {
                Some(c) => format!("{}x{}", t.rows, c),
                None => t.rows.to_string(),
            };
            let kind = match t.kind {
                EntryKind::Quantized => "quantized",
                EntryKind::Passthrough => "passthrough",
            };
            writeln!(
                f,
                "{:<width$} {:>11} {:>11} {:>8} {:>8.4}% {:>14} {:>14} {:>7}%",
                t.name,
                shape,
                kind,
                t.outlier_count,
                t.outlier_fraction * 100.0,
                opt(t.rtn_error, 6),
                opt(t.final_error, 6),
                opt(t.reduction_pct, 2),
            )?;
        }
        for g in &self.groupings {
            let w = g
                .groups
                .iter()
                .map(|r| r.key.len())
                .chain([8])
                .max()
                .unwrap_or(8);
            writeln!(f, "\nby {}:", g.by)?;
            for r in &g.groups {
                write_group(f, r, w)?;
            }
        }
        writeln!(f)?;
        write_group(f, &self.totals, width)
    }
}
