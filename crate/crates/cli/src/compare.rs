//! Side-by-side comparison of two run directories.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{file}: {message}")]
    Malformed { file: String, message: String },
    /// The two directories do not hold comparable observables.
    #[error("{0}")]
    Mismatch(String),
}

/// Deviation of one value column of one file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColumnDeviation {
    pub file: String,
    pub column: String,
    pub max_abs: f64,
    pub mean_abs: f64,
    /// rows where both sides have a value
    pub compared: usize,
    /// rows masked (empty) on exactly one side
    pub mask_differences: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub a: String,
    pub b: String,
    pub columns: Vec<ColumnDeviation>,
}

impl ComparisonReport {
    pub fn max_deviation(&self) -> f64 {
        self.columns.iter().map(|c| c.max_abs).fold(0.0, f64::max)
    }

    pub fn mask_differences(&self) -> usize {
        self.columns.iter().map(|c| c.mask_differences).sum()
    }

    pub fn get(&self, file: &str, column: &str) -> Option<&ColumnDeviation> {
        self.columns.iter().find(|c| c.file == file && c.column == column)
    }

    /// Plain-text table, one line per compared column.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "comparing {} against {}", self.a, self.b);
        let _ = writeln!(
            out,
            "{:<28} {:<16} {:>12} {:>12} {:>8} {:>7}",
            "file", "column", "max |dev|", "mean |dev|", "rows", "masks"
        );
        for c in &self.columns {
            let _ = writeln!(
                out,
                "{:<28} {:<16} {:>12.4e} {:>12.4e} {:>8} {:>7}",
                c.file, c.column, c.max_abs, c.mean_abs, c.compared, c.mask_differences
            );
        }
        let _ = writeln!(out, "largest deviation: {:.4e}", self.max_deviation());
        out
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
}

fn read_table(dir: &Path, name: &str) -> Result<Table, CompareError> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|source| CompareError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let malformed = |message: String| CompareError::Malformed {
        file: path.display().to_string(),
        message,
    };
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| malformed("no header".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(malformed(format!("row {} has {} cells, header has {}", n + 1, cells.len(), header.len())));
        }
        let row = cells
            .iter()
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|e| malformed(format!("row {}: `{c}`: {e}", n + 1)))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn observable_files(dir: &Path) -> Result<BTreeSet<String>, CompareError> {
    let entries = fs::read_dir(dir).map_err(|source| CompareError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut out = BTreeSet::new();
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".csv") {
            out.insert(name);
        }
    }
    Ok(out)
}

/// Number of leading coordinate columns of a file.
fn coordinates(file: &str) -> usize {
    if file.starts_with("g2_t") {
        2
    } else {
        1
    }
}

fn same_coordinate(x: f64, y: f64) -> bool {
    (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0)
}

/// Per-file, per-column deviations between two run directories.
pub fn compare(a: &Path, b: &Path) -> Result<ComparisonReport, CompareError> {
    let files_a = observable_files(a)?;
    let files_b = observable_files(b)?;
    if files_a != files_b {
        let only_a: Vec<_> = files_a.difference(&files_b).cloned().collect();
        let only_b: Vec<_> = files_b.difference(&files_a).cloned().collect();
        return Err(CompareError::Mismatch(format!(
            "different observable files (only in first: {only_a:?}; only in second: {only_b:?})"
        )));
    }
    if files_a.is_empty() {
        return Err(CompareError::Mismatch(format!("no observable files in {}", a.display())));
    }
    let mut columns = Vec::new();
    for file in &files_a {
        let ta = read_table(a, file)?;
        let tb = read_table(b, file)?;
        if ta.header != tb.header {
            return Err(CompareError::Mismatch(format!(
                "{file}: columns differ ({:?} vs {:?})",
                ta.header, tb.header
            )));
        }
        if ta.rows.len() != tb.rows.len() {
            return Err(CompareError::Mismatch(format!(
                "{file}: grid sizes differ ({} vs {} rows)",
                ta.rows.len(),
                tb.rows.len()
            )));
        }
        let k = coordinates(file);
        for (n, (ra, rb)) in ta.rows.iter().zip(&tb.rows).enumerate() {
            for c in 0..k {
                match (ra[c], rb[c]) {
                    (Some(x), Some(y)) if same_coordinate(x, y) => {}
                    _ => {
                        return Err(CompareError::Mismatch(format!(
                            "{file}: grids differ at row {} column `{}`",
                            n + 1,
                            ta.header[c]
                        )))
                    }
                }
            }
        }
        for c in k..ta.header.len() {
            if ta.header[c].starts_with("stderr") {
                continue;
            }
            let mut max_abs = 0.0f64;
            let mut sum = 0.0;
            let mut compared = 0;
            let mut mask_differences = 0;
            for (ra, rb) in ta.rows.iter().zip(&tb.rows) {
                match (ra[c], rb[c]) {
                    (Some(x), Some(y)) => {
                        let d = (x - y).abs();
                        max_abs = max_abs.max(d);
                        sum += d;
                        compared += 1;
                    }
                    (None, None) => {}
                    _ => mask_differences += 1,
                }
            }
            columns.push(ColumnDeviation {
                file: file.clone(),
                column: ta.header[c].clone(),
                max_abs,
                mean_abs: if compared > 0 { sum / compared as f64 } else { 0.0 },
                compared,
                mask_differences,
            });
        }
    }
    Ok(ComparisonReport {
        a: a.display().to_string(),
        b: b.display().to_string(),
        columns,
    })
}
