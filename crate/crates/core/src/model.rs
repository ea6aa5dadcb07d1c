//! The two parametric maps of the binary autoencoder: the step-function
//! linear encoder h(x) = step(Wx + w0) and the affine decoder f(z) = Az + b,
//! plus the text model file format.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::codes::{BinaryCodeMatrix, low_mask};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Normalization};

/// Hash function h(x) = step(Wx + w0), with step(t) = 1 for t >= 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    pub weights: DMatrix<f64>, // L x D
    pub bias: DVector<f64>,    // L
}

impl LinearEncoder {
    pub fn bits(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dims(&self) -> usize {
        self.weights.ncols()
    }

    /// Encodes one point. The boundary convention is step(0) = 1.
    pub fn encode_point(&self, x: &DVector<f64>) -> u64 {
        let act = &self.weights * x + &self.bias;
        let mut code = 0u64;
        for l in 0..self.bits() {
            if act[l] >= 0.0 {
                code |= 1 << l;
            }
        }
        code
    }

    pub fn encode(&self, x: &FeatureMatrix) -> Result<BinaryCodeMatrix> {
        if x.dims() != self.dims() {
            return Err(Error::DimensionMismatch(format!(
                "encoder expects {} dims, features have {}",
                self.dims(),
                x.dims()
            )));
        }
        // one matrix product for the whole batch
        let act = &self.weights * x.matrix();
        let l = self.bits();
        let words = (0..x.len())
            .map(|n| {
                let mut code = 0u64;
                for bit in 0..l {
                    if act[(bit, n)] + self.bias[bit] >= 0.0 {
                        code |= 1 << bit;
                    }
                }
                code
            })
            .collect();
        BinaryCodeMatrix::new(l, words)
    }
}

/// Reconstruction map f(z) = Az + b.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecoder {
    pub weights: DMatrix<f64>, // D x L
    pub bias: DVector<f64>,    // D
}

impl LinearDecoder {
    pub fn bits(&self) -> usize {
        self.weights.ncols()
    }

    pub fn dims(&self) -> usize {
        self.weights.nrows()
    }

    /// Reconstructs one point from a packed code. Since z is binary this is
    /// a gather of decoder columns plus the bias, no multiplies.
    pub fn decode_code(&self, code: u64) -> DVector<f64> {
        let mut x = self.bias.clone();
        let mut rest = code & low_mask(self.bits());
        while rest != 0 {
            let l = rest.trailing_zeros() as usize;
            x += self.weights.column(l);
            rest &= rest - 1;
        }
        x
    }

    pub fn decode(&self, z: &BinaryCodeMatrix) -> Result<FeatureMatrix> {
        if z.bits() != self.bits() {
            return Err(Error::DimensionMismatch(format!(
                "decoder expects {} bits, codes have {}",
                self.bits(),
                z.bits()
            )));
        }
        let d = self.dims();
        let mut out = DMatrix::zeros(d, z.len());
        for n in 0..z.len() {
            out.set_column(n, &self.decode_code(z.word(n)));
        }
        FeatureMatrix::new(out)
    }

    /// Squared reconstruction error ||x - f(z)||^2 for one point.
    pub fn residual_sq(&self, x: &DVector<f64>, code: u64) -> f64 {
        (x - self.decode_code(code)).norm_squared()
    }
}

/// Full trained model: hash function, decoder, and the normalization that
/// was applied to the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    pub encoder: LinearEncoder,
    pub decoder: LinearDecoder,
    pub normalization: Option<Normalization>,
}

fn write_row(w: &mut impl Write, row: impl Iterator<Item = f64>) -> std::io::Result<()> {
    let s: Vec<String> = row.map(|v| format!("{v:.17e}")).collect();
    writeln!(w, "{}", s.join(" "))
}

fn read_row(lines: &mut impl Iterator<Item = std::io::Result<String>>, len: usize) -> Result<Vec<f64>> {
    let line = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("model file truncated".into()))??;
    let vals: std::result::Result<Vec<f64>, _> =
        line.split_whitespace().map(str::parse::<f64>).collect();
    let vals = vals.map_err(|e| Error::MalformedHeader(format!("bad model row: {e}")))?;
    if vals.len() != len {
        return Err(Error::MalformedHeader(format!(
            "model row has {} values, expected {len}",
            vals.len()
        )));
    }
    Ok(vals)
}

impl HashModel {
    /// Text model file: line 1 `BHM1 L D`, then L rows of W, one row w0,
    /// D rows of A, one row b, one row `norm <mean...> <scale>` or `none`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        let l = self.encoder.bits();
        let d = self.encoder.dims();
        writeln!(w, "BHM1 {l} {d}")?;
        for row in 0..l {
            write_row(&mut w, self.encoder.weights.row(row).iter().cloned())?;
        }
        write_row(&mut w, self.encoder.bias.iter().cloned())?;
        for row in 0..d {
            write_row(&mut w, self.decoder.weights.row(row).iter().cloned())?;
        }
        write_row(&mut w, self.decoder.bias.iter().cloned())?;
        match &self.normalization {
            Some(nm) => {
                let mut vals: Vec<f64> = nm.mean.iter().cloned().collect();
                vals.push(nm.scale);
                write!(w, "norm ")?;
                write_row(&mut w, vals.into_iter())?;
            }
            None => writeln!(w, "none")?,
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::MalformedHeader("empty model file".into()))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "BHM1" {
            return Err(Error::MalformedHeader(format!("bad model header: {header}")));
        }
        let l: usize = parts[1]
            .parse()
            .map_err(|_| Error::MalformedHeader("bad L".into()))?;
        let d: usize = parts[2]
            .parse()
            .map_err(|_| Error::MalformedHeader("bad D".into()))?;
        if l == 0 || l > 64 {
            return Err(Error::BitsOutOfRange(l));
        }
        let mut wmat = DMatrix::zeros(l, d);
        for row in 0..l {
            let vals = read_row(&mut lines, d)?;
            for (col, v) in vals.into_iter().enumerate() {
                wmat[(row, col)] = v;
            }
        }
        let w0 = DVector::from_vec(read_row(&mut lines, l)?);
        let mut amat = DMatrix::zeros(d, l);
        for row in 0..d {
            let vals = read_row(&mut lines, l)?;
            for (col, v) in vals.into_iter().enumerate() {
                amat[(row, col)] = v;
            }
        }
        let b = DVector::from_vec(read_row(&mut lines, d)?);
        let norm_line = lines
            .next()
            .ok_or_else(|| Error::MalformedHeader("model file truncated".into()))??;
        let normalization = if norm_line.trim() == "none" {
            None
        } else if let Some(rest) = norm_line.strip_prefix("norm ") {
            let vals: std::result::Result<Vec<f64>, _> =
                rest.split_whitespace().map(str::parse::<f64>).collect();
            let vals =
                vals.map_err(|e| Error::MalformedHeader(format!("bad normalization: {e}")))?;
            if vals.len() != d + 1 {
                return Err(Error::MalformedHeader(
                    "normalization length mismatch".into(),
                ));
            }
            Some(Normalization {
                mean: DVector::from_vec(vals[..d].to_vec()),
                scale: vals[d],
            })
        } else {
            return Err(Error::MalformedHeader(format!(
                "bad normalization line: {norm_line}"
            )));
        };
        Ok(Self {
            encoder: LinearEncoder {
                weights: wmat,
                bias: w0,
            },
            decoder: LinearDecoder {
                weights: amat,
                bias: b,
            },
            normalization,
        })
    }
}
