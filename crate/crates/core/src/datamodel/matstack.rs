//! Matrix-stack CSV.
//!
//! ```text
//! #matstack p=2 q=3 labeled=1
//! x11,x12,x13,x21,x22,x23,label
//! ```
//!
//! One observation per line, row-major, optional trailing integer label.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::MatrixStack;
use crate::error::{Error, Result};

/// Shortest representation that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn parse_header(path: &Path, line: &str) -> Result<(usize, usize, bool)> {
    let bad = |msg: &str| Error::parse(path, 1, format!("{msg}; expected '#matstack p=<p> q=<q> labeled=<0|1>'"));
    let mut parts = line.split(' ');
    if parts.next() != Some("#matstack") {
        return Err(bad("missing #matstack header"));
    }
    let mut field = |key: &str| -> Result<usize> {
        let tok = parts.next().ok_or_else(|| bad(&format!("missing {key}")))?;
        tok.strip_prefix(key)
            .and_then(|v| v.strip_prefix('='))
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| bad(&format!("malformed field '{tok}'")))
    };
    let p = field("p")?;
    let q = field("q")?;
    let labeled = field("labeled")?;
    if parts.next().is_some() {
        return Err(bad("trailing header fields"));
    }
    if p == 0 || q == 0 {
        return Err(bad("dimensions must be positive"));
    }
    let labeled = match labeled {
        0 => false,
        1 => true,
        _ => return Err(bad("labeled must be 0 or 1")),
    };
    Ok((p, q, labeled))
}

pub fn read_matstack(path: impl AsRef<Path>) -> Result<MatrixStack> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matstack(path, &text)
}

pub(crate) fn parse_matstack(path: &Path, text: &str) -> Result<MatrixStack> {
    let mut lines = text.split('\n').enumerate();
    let header = lines
        .next()
        .map(|(_, l)| l.trim_end_matches('\r'))
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let (p, q, labeled) = parse_header(path, header)?;
    let width = p * q + usize::from(labeled);

    let mut mats = Vec::new();
    let mut labels = Vec::new();
    for (idx, raw) in lines {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != width {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {width} fields, found {}", cells.len()),
            ));
        }
        let mut vals = Vec::with_capacity(p * q);
        for (col, cell) in cells[..p * q].iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("field {}: '{cell}' is not a number", col + 1)))?;
            if !v.is_finite() {
                return Err(Error::parse(path, lineno, format!("field {}: non-finite value", col + 1)));
            }
            vals.push(v);
        }
        mats.push(DMatrix::from_row_slice(p, q, &vals));
        if labeled {
            let cell = cells[p * q];
            let l: usize = cell
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("label '{cell}' is not a non-negative integer")))?;
            labels.push(l);
        }
    }
    if mats.is_empty() {
        return Err(Error::parse(path, 1, "no observations"));
    }
    MatrixStack::new(mats, labeled.then_some(labels))
}

pub(crate) fn render_matstack(stack: &MatrixStack) -> String {
    let mut out = String::new();
    let labeled = stack.is_labeled();
    writeln!(out, "#matstack p={} q={} labeled={}", stack.p(), stack.q(), u8::from(labeled)).unwrap();
    for i in 0..stack.n() {
        let row: Vec<String> = stack.row_major(i).into_iter().map(format_f64).collect();
        out.push_str(&row.join(","));
        if let Some(l) = stack.labels() {
            write!(out, ",{}", l[i]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_matstack(stack: &MatrixStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_matstack(stack)).map_err(|e| Error::io(path, e))
}
