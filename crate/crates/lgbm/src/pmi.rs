//! Empirical PMI and its shifted positive variant (SPPMI), the initial
//! covariance estimator of the pipeline.
//!
//! `PMI(j, j') = ln(C * C(j,j') / (C(j,.) * C(j',.)))` where `C` is the grand
//! co-occurrence total. Zero counts map to `-inf`; `sppmi` floors every entry
//! at `eta` so the sentinel never leaves this module.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::cooc::CoocMatrix;
use crate::error::{Error, Result};

/// Raw empirical PMI; entries with zero co-occurrence are `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct PmiMatrix {
    pub d: usize,
    pub values: DMatrix<f64>,
}

/// Shifted positive PMI: symmetric, every entry at least `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct SppmiMatrix {
    pub d: usize,
    pub values: DMatrix<f64>,
    pub eta: f64,
}

/// Default floor for SPPMI entries; far below covariance entries at
/// unit-scale variances while keeping the matrix finite.
pub const DEFAULT_ETA: f64 = -5.0;

/// Compute the empirical PMI matrix from co-occurrence counts.
pub fn empirical_pmi(c: &CoocMatrix) -> Result<PmiMatrix> {
    let d = c.d();
    if c.total() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let ln_total = (c.total() as f64).ln();
    let ln_margin: Vec<f64> = (0..d)
        .map(|i| {
            let m = c.row_margin(i);
            if m == 0 {
                f64::NAN // never used: count(i, j) == 0 whenever margin is 0
            } else {
                (m as f64).ln()
            }
        })
        .collect();
    let values = DMatrix::from_fn(d, d, |i, j| {
        let count = c.count(i, j);
        if count == 0 {
            f64::NEG_INFINITY
        } else {
            ln_total + (count as f64).ln() - ln_margin[i] - ln_margin[j]
        }
    });
    Ok(PmiMatrix { d, values })
}

/// Entrywise `max(PMI, eta)`.
pub fn sppmi(pmi: &PmiMatrix, eta: f64) -> Result<SppmiMatrix> {
    if !eta.is_finite() {
        return Err(Error::invalid(format!("eta must be finite, got {eta}")));
    }
    let values = pmi.values.map(|v| v.max(eta));
    Ok(SppmiMatrix {
        d: pmi.d,
        values,
        eta,
    })
}

impl SppmiMatrix {
    /// Wrap an existing symmetric matrix (e.g. a noiseless covariance) as the
    /// initial estimator, flooring entries at `eta`.
    pub fn from_matrix(values: DMatrix<f64>, eta: f64) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::invalid("SPPMI matrix must be square"));
        }
        let d = values.nrows();
        Ok(SppmiMatrix {
            d,
            values: values.map(|v| v.max(eta)),
            eta,
        })
    }
}

/// Write a dense matrix as CSV: a header line holding the row count, then
/// one comma-separated line per row.
pub fn write_dense_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", m.nrows()).map_err(|e| Error::io(path, e))?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                write!(w, ",").map_err(|e| Error::io(path, e))?;
            }
            write!(w, "{}", m[(i, j)]).map_err(|e| Error::io(path, e))?;
        }
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a dense CSV matrix written by [`write_dense_csv`]. The column count
/// is inferred from the first data row and enforced on the rest.
pub fn read_dense_csv(path: &Path) -> Result<DMatrix<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let rows: usize = header
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("invalid row count {header:?}")))?;
    let mut data: Vec<Vec<f64>> = Vec::with_capacity(rows);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("invalid value {f:?}")))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = data.first() {
            if row.len() != first.len() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("row has {} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        data.push(row);
    }
    if data.len() != rows {
        return Err(Error::parse(
            path,
            1,
            format!("header declares {rows} rows but file has {}", data.len()),
        ));
    }
    let ncols = data.first().map_or(0, |r| r.len());
    Ok(DMatrix::from_fn(rows, ncols, |i, j| data[i][j]))
}
