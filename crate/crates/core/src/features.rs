//! Dense feature matrices, column per point, with normalization and file i/o.
//!
//! Two on-disk formats are supported: CSV (one row per feature, no header)
//! and a raw little-endian f32 format with a `BHF1` magic header.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Normalization applied to a feature matrix: subtract the per-feature mean,
/// then scale every feature by a single global factor so the largest feature
/// range becomes 1. A single scale preserves Euclidean distance ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: DVector<f64>,
    pub scale: f64,
}

/// N data points in D dimensions, stored column-per-point.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    normalization: Option<Normalization>,
}

impl FeatureMatrix {
    /// Wraps a D x N matrix. All entries must be finite.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "feature matrix must be non-empty".into(),
            ));
        }
        for col in 0..data.ncols() {
            for row in 0..data.nrows() {
                if !data[(row, col)].is_finite() {
                    return Err(Error::NonFinite { row, col });
                }
            }
        }
        Ok(Self {
            data,
            normalization: None,
        })
    }

    pub fn dims(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn point(&self, n: usize) -> DVector<f64> {
        self.data.column(n).into_owned()
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    /// Selects a subset of points by index, keeping normalization metadata.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            data: self.data.select_columns(indices.iter()),
            normalization: self.normalization.clone(),
        }
    }

    /// Centers the data and rescales so the largest feature range equals 1.
    /// Already-normalized input is returned unchanged.
    pub fn normalize(&self) -> Result<Self> {
        if self.normalization.is_some() {
            return Ok(self.clone());
        }
        if self.len() < 2 {
            return Err(Error::InvalidArgument(
                "normalization needs at least 2 points".into(),
            ));
        }
        let d = self.dims();
        let n = self.len();
        let mean = self.data.column_mean();
        let mut max_range = 0.0f64;
        for row in 0..d {
            let r = self.data.row(row);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &v in r.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            max_range = max_range.max(hi - lo);
        }
        if max_range <= 0.0 {
            return Err(Error::ZeroRange);
        }
        let scale = 1.0 / max_range;
        let mut out = DMatrix::zeros(d, n);
        for col in 0..n {
            for row in 0..d {
                out[(row, col)] = (self.data[(row, col)] - mean[row]) * scale;
            }
        }
        Ok(Self {
            data: out,
            normalization: Some(Normalization { mean, scale }),
        })
    }

    /// Applies a stored normalization (from a trained model) to raw features.
    pub fn apply_normalization(&self, norm: &Normalization) -> Result<Self> {
        if norm.mean.len() != self.dims() {
            return Err(Error::DimensionMismatch(format!(
                "normalization mean has {} entries, features have {} dims",
                norm.mean.len(),
                self.dims()
            )));
        }
        let mut out = self.data.clone();
        for col in 0..out.ncols() {
            for row in 0..out.nrows() {
                out[(row, col)] = (out[(row, col)] - norm.mean[row]) * norm.scale;
            }
        }
        Ok(Self {
            data: out,
            normalization: Some(norm.clone()),
        })
    }

    /// Loads a CSV file: one row per feature, comma-separated, no header.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (row_idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut row = Vec::new();
            for (col_idx, tok) in line.split(',').enumerate() {
                let v: f64 = tok.trim().parse().map_err(|e| Error::Parse {
                    row: row_idx,
                    col: col_idx,
                    msg: format!("{e}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        row: row_idx,
                        col: col_idx,
                    });
                }
                row.push(v);
            }
            if let Some(first) = rows.first() {
                if row.len() != first.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "row {} has {} values, expected {}",
                        row_idx,
                        row.len(),
                        first.len()
                    )));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::MalformedHeader("empty CSV file".into()));
        }
        let d = rows.len();
        let n = rows[0].len();
        let data = DMatrix::from_fn(d, n, |r, c| rows[r][c]);
        Self::new(data)
    }

    /// Loads the raw-f32 format: magic `BHF1`, D (u32 LE), N (u32 LE),
    /// then D*N f32 LE values point-major (column-major).
    pub fn load_raw(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut reader = BufReader::new(file);
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != b"BHF1" {
            return Err(Error::MalformedHeader(format!(
                "bad magic {:?}, expected BHF1",
                magic
            )));
        }
        let mut word = [0u8; 4];
        reader.read_exact(&mut word)?;
        let d = u32::from_le_bytes(word) as usize;
        reader.read_exact(&mut word)?;
        let n = u32::from_le_bytes(word) as usize;
        if d == 0 || n == 0 {
            return Err(Error::MalformedHeader(format!("empty shape {d}x{n}")));
        }
        let mut data = DMatrix::zeros(d, n);
        for col in 0..n {
            for row in 0..d {
                reader.read_exact(&mut word)?;
                let v = f32::from_le_bytes(word) as f64;
                if !v.is_finite() {
                    return Err(Error::NonFinite { row, col });
                }
                data[(row, col)] = v;
            }
        }
        Self::new(data)
    }

    pub fn load(path: &Path, format: FileFormat) -> Result<Self> {
        match format {
            FileFormat::Csv => Self::load_csv(path),
            FileFormat::RawF32 => Self::load_raw(path),
        }
    }

    /// Guesses the format from the extension: `.csv` is CSV, anything else raw-f32.
    pub fn load_auto(path: &Path) -> Result<Self> {
        if path.extension().map(|e| e == "csv").unwrap_or(false) {
            Self::load_csv(path)
        } else {
            Self::load_raw(path)
        }
    }

    pub fn save_raw(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(b"BHF1")?;
        w.write_all(&(self.dims() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        for col in 0..self.len() {
            for row in 0..self.dims() {
                w.write_all(&(self.data[(row, col)] as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    RawF32,
}
