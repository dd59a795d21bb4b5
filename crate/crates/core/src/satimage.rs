//! Statlog Landsat (`sat.trn` / `sat.tst`) ingestion.
//!
//! Each record holds a 3×3 pixel neighbourhood in four spectral bands:
//! 36 attributes, pixel-major (`attr[4j + b]` is band `b` of pixel `j`),
//! followed by an integer class code.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datamodel::MatrixStack;
use crate::error::{Error, Result};

pub const BANDS: usize = 4;
pub const PIXELS: usize = 9;

/// Statlog class codes and names (code 6 is unused in the distribution).
pub const CODEBOOK: [(usize, &str); 6] = [
    (1, "red-soil"),
    (2, "cotton-crop"),
    (3, "grey-soil"),
    (4, "damp-grey-soil"),
    (5, "vegetation-stubble"),
    (7, "very-damp-grey-soil"),
];

/// Grey soil, damp grey soil and soil with vegetation stubble.
pub const SOIL_CLASSES: [usize; 3] = [3, 4, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// 4 × 9: bands down the rows, pixel `j` in column `j`.
    #[default]
    PixelColumns,
    /// 9 × 4: the transpose.
    BandColumns,
}

impl FromStr for Orientation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel-columns" | "4x9" => Ok(Self::PixelColumns),
            "band-columns" | "9x4" => Ok(Self::BandColumns),
            _ => Err(Error::InvalidParameter(format!("unknown orientation '{s}' (expected 4x9 or 9x4)"))),
        }
    }
}

pub fn class_code(name: &str) -> Result<usize> {
    if let Ok(code) = name.parse::<usize>() {
        return CODEBOOK
            .iter()
            .find(|(c, _)| *c == code)
            .map(|(c, _)| *c)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown Statlog class code {code}")));
    }
    CODEBOOK
        .iter()
        .find(|(_, n)| *n == name)
        .map(|(c, _)| *c)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown Statlog class '{name}'")))
}

/// Comma-separated class codes or names, e.g. `3,4,5` or `grey-soil,damp-grey-soil`.
pub fn parse_class_list(s: &str) -> Result<Vec<usize>> {
    let mut codes: Vec<usize> = s.split(',').map(|t| class_code(t.trim())).collect::<Result<_>>()?;
    codes.sort_unstable();
    codes.dedup();
    if codes.is_empty() {
        return Err(Error::InvalidParameter("empty class list".into()));
    }
    Ok(codes)
}

/// The 36 attributes of one record as a matrix.
pub fn reshape(values: &[f64], orientation: Orientation) -> DMatrix<f64> {
    assert_eq!(values.len(), BANDS * PIXELS);
    let m = DMatrix::from_fn(BANDS, PIXELS, |b, j| values[BANDS * j + b]);
    match orientation {
        Orientation::PixelColumns => m,
        Orientation::BandColumns => m.transpose(),
    }
}

/// Inverse of [`reshape`].
pub fn flatten(m: &DMatrix<f64>, orientation: Orientation) -> Vec<f64> {
    let m = match orientation {
        Orientation::PixelColumns => m.clone(),
        Orientation::BandColumns => m.transpose(),
    };
    (0..PIXELS).flat_map(|j| (0..BANDS).map(move |b| (b, j))).map(|(b, j)| m[(b, j)]).collect()
}

/// Parse one Statlog file, keeping `classes` (Statlog codes, ascending) and
/// relabelling them `0..classes.len()`.
pub fn parse_statlog(path: &Path, text: &str, classes: &[usize], orientation: Orientation) -> Result<MatrixStack> {
    let mut mats = Vec::new();
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split_whitespace().collect();
        if cells.len() != BANDS * PIXELS + 1 {
            return Err(Error::parse(path, lineno, format!("expected 37 fields, found {}", cells.len())));
        }
        let code: usize = cells[36]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("class '{}' is not an integer", cells[36])))?;
        if !CODEBOOK.iter().any(|(c, _)| *c == code) {
            return Err(Error::parse(path, lineno, format!("unknown class code {code}")));
        }
        let Some(group) = classes.iter().position(|&c| c == code) else {
            continue;
        };
        let mut vals = Vec::with_capacity(36);
        for (k, cell) in cells[..36].iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("field {}: '{cell}' is not a number", k + 1)))?;
            if !v.is_finite() {
                return Err(Error::parse(path, lineno, format!("field {}: non-finite value", k + 1)));
            }
            vals.push(v);
        }
        mats.push(reshape(&vals, orientation));
        labels.push(group);
    }
    if mats.is_empty() {
        return Err(Error::parse(path, 1, "no records of the selected classes"));
    }
    MatrixStack::new(mats, Some(labels))
}

/// Read the training and test files.
pub fn parse_satimage(
    train: impl AsRef<Path>,
    test: impl AsRef<Path>,
    classes: &[usize],
    orientation: Orientation,
) -> Result<(MatrixStack, MatrixStack)> {
    let read = |p: &Path| -> Result<MatrixStack> {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        parse_statlog(p, &text, classes, orientation)
    };
    Ok((read(train.as_ref())?, read(test.as_ref())?))
}

/// Per-group observation counts.
pub fn class_counts(stack: &MatrixStack) -> Vec<usize> {
    let labels = stack.labels().unwrap_or(&[]);
    let g = labels.iter().max().map_or(0, |m| m + 1);
    let mut c = vec![0; g];
    for &l in labels {
        c[l] += 1;
    }
    c
}
