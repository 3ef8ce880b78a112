//! File plumbing: JSON documents and the CSV dataset schemas.
//!
//! Scalar datasets use the header `x1,...,xp,y`. PSD datasets use
//! `x1,...,xp,m11,m12,...,mdd` with the full row-major `d x d` target.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Result, SosError};
use crate::linalg::SYMMETRY_TOL;

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// `x_i` inputs paired with scalar outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarDataset {
    /// `n x p`, one input per row.
    pub inputs: DMatrix<f64>,
    pub outputs: Vec<f64>,
}

impl ScalarDataset {
    pub fn new(inputs: DMatrix<f64>, outputs: Vec<f64>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(SosError::Empty("dataset"));
        }
        if inputs.nrows() != outputs.len() {
            return Err(SosError::DimensionMismatch { expected: inputs.nrows(), got: outputs.len() });
        }
        Ok(Self { inputs, outputs })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: select_rows(&self.inputs, idx),
            outputs: idx.iter().map(|&i| self.outputs[i]).collect(),
        }
    }
}

/// `x_i` inputs paired with symmetric `d x d` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdDataset {
    pub inputs: DMatrix<f64>,
    pub targets: Vec<DMatrix<f64>>,
}

impl PsdDataset {
    pub fn new(inputs: DMatrix<f64>, targets: Vec<DMatrix<f64>>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(SosError::Empty("dataset"));
        }
        if inputs.nrows() != targets.len() {
            return Err(SosError::DimensionMismatch { expected: inputs.nrows(), got: targets.len() });
        }
        let d = targets[0].nrows();
        for (i, m) in targets.iter().enumerate() {
            if m.nrows() != d || m.ncols() != d {
                return Err(SosError::DimensionMismatch { expected: d, got: m.nrows().max(m.ncols()) });
            }
            let asym = crate::linalg::asymmetry(m);
            if asym > SYMMETRY_TOL {
                return Err(SosError::Format(format!("row {}: target matrix is not symmetric (asymmetry {asym:e})", i + 1)));
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn d(&self) -> usize {
        self.targets[0].nrows()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: select_rows(&self.inputs, idx),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }
}

pub fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

fn parse_table(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| SosError::Format(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SosError::Format(format!("row {}: {e}", i + 1)))?;
        if rec.len() != header.len() {
            return Err(SosError::Format(format!("row {}: expected {} fields, found {}", i + 1, header.len(), rec.len())));
        }
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| SosError::Format(format!("row {}: cannot parse `{s}`", i + 1))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(SosError::Format(format!("row {}: non-finite value", i + 1)));
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(SosError::Empty("dataset"));
    }
    Ok((header, rows))
}

fn count_inputs(header: &[String]) -> Result<usize> {
    let p = header.iter().take_while(|h| h.starts_with('x')).count();
    for (i, h) in header.iter().take(p).enumerate() {
        if *h != format!("x{}", i + 1) {
            return Err(SosError::Format(format!("unexpected column `{h}`, expected `x{}`", i + 1)));
        }
    }
    if p == 0 {
        return Err(SosError::Format("header has no input columns `x1,...`".into()));
    }
    Ok(p)
}

pub fn parse_scalar_csv(text: &str) -> Result<ScalarDataset> {
    let (header, rows) = parse_table(text)?;
    let p = count_inputs(&header)?;
    if header.len() != p + 1 || header[p] != "y" {
        return Err(SosError::Format("scalar dataset header must be `x1,...,xp,y`".into()));
    }
    let inputs = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    ScalarDataset::new(inputs, rows.iter().map(|r| r[p]).collect())
}

pub fn parse_psd_csv(text: &str) -> Result<PsdDataset> {
    let (header, rows) = parse_table(text)?;
    let p = count_inputs(&header)?;
    let m = header.len() - p;
    let d = (m as f64).sqrt().round() as usize;
    if d == 0 || d * d != m {
        return Err(SosError::Format(format!("PSD dataset needs d^2 target columns, found {m}")));
    }
    for a in 0..d {
        for b in 0..d {
            let want = format!("m{}{}", a + 1, b + 1);
            if header[p + a * d + b] != want {
                return Err(SosError::Format(format!("unexpected column `{}`, expected `{want}`", header[p + a * d + b])));
            }
        }
    }
    let inputs = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let targets = rows.iter().map(|r| DMatrix::from_row_slice(d, d, &r[p..])).collect();
    PsdDataset::new(inputs, targets)
}

pub fn read_scalar_csv(path: impl AsRef<Path>) -> Result<ScalarDataset> {
    parse_scalar_csv(&read_to_string(path)?)
}

pub fn read_psd_csv(path: impl AsRef<Path>) -> Result<PsdDataset> {
    parse_psd_csv(&read_to_string(path)?)
}

/// Reads an input-only table (`x1,...,xp`), used for query and grid files.
pub fn read_points_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let (header, rows) = parse_table(&read_to_string(path)?)?;
    let p = count_inputs(&header)?;
    if header.len() != p {
        return Err(SosError::Format("point file header must be `x1,...,xp`".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}

fn read_to_string(path: impl AsRef<Path>) -> Result<String> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    Ok(s)
}

pub fn input_header(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("x{i}")).collect()
}

pub fn scalar_csv(data: &ScalarDataset) -> String {
    let mut out = input_header(data.dim()).join(",");
    out.push_str(",y\n");
    for (i, y) in data.outputs.iter().enumerate() {
        for v in data.inputs.row(i).iter() {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{y}\n"));
    }
    out
}

pub fn psd_csv(data: &PsdDataset) -> String {
    let d = data.d();
    let mut cols = input_header(data.inputs.ncols());
    for a in 1..=d {
        for b in 1..=d {
            cols.push(format!("m{a}{b}"));
        }
    }
    let mut out = cols.join(",");
    out.push('\n');
    for (i, m) in data.targets.iter().enumerate() {
        let mut fields: Vec<String> = data.inputs.row(i).iter().map(|v| v.to_string()).collect();
        for a in 0..d {
            for b in 0..d {
                fields.push(m[(a, b)].to_string());
            }
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn points_csv(points: &DMatrix<f64>) -> String {
    let mut out = input_header(points.ncols()).join(",");
    out.push('\n');
    for i in 0..points.nrows() {
        let row: Vec<String> = points.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}
