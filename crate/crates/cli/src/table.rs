//! Plain-text tables and CSV side files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// Columns padded to their widest cell; the first column is left-aligned.
pub fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            let pad = w - cell.chars().count();
            if i == 0 {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(header.to_vec()) + "\n";
    let rule: usize = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

pub fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",") + "\n";
    for row in rows {
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Core(dtc_core::Error::io(dir, e)))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Core(dtc_core::Error::io(&path, e)))
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
