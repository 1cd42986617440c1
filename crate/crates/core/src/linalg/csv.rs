//! Matrix CSV: one row per line, comma separated, 17 significant digits.

use std::fs;
use std::path::Path;

use super::Matrix;
use crate::error::{Error, Result};

/// Formats a value with 17 significant digits (`{:.16e}`), which round-trips every `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_csv_string(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 24);
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(|&v| format_f64(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn from_csv_str(s: &str) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in s.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut n = 0;
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad number {field:?}", lineno + 1)))?;
            data.push(v);
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => return Err(Error::Parse(format!("line {}: {n} fields, expected {c}", lineno + 1))),
            _ => {}
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

pub fn write_csv(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, to_csv_string(m))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Matrix> {
    from_csv_str(&fs::read_to_string(path)?)
}
