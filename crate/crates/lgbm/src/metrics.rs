//! Evaluation metrics: Rand index for partitions, relative matrix errors,
//! and F-score for precision-support recovery.

use nalgebra::DMatrix;

use crate::cluster::Partition;
use crate::error::{Error, Result};

/// Matrix norm used by [`relative_error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixNorm {
    Max,
    Frobenius,
}

/// Fraction of unordered code pairs on which two partitions agree (placed
/// together in both, or apart in both).
///
/// Computed from the contingency table; the O(d^2) pair enumeration serves
/// as the test oracle.
pub fn rand_index(a: &Partition, b: &Partition) -> Result<f64> {
    if a.d() != b.d() {
        return Err(Error::invalid(format!(
            "partitions cover different code counts: {} vs {}",
            a.d(),
            b.d()
        )));
    }
    let d = a.d();
    if d < 2 {
        return Ok(1.0);
    }
    let (ka, kb) = (a.group_count(), b.group_count());
    let mut table = vec![0u64; ka * kb];
    let mut rows = vec![0u64; ka];
    let mut cols = vec![0u64; kb];
    for i in 0..d {
        let (ga, gb) = (a.label_of(i), b.label_of(i));
        table[ga * kb + gb] += 1;
        rows[ga] += 1;
        cols[gb] += 1;
    }
    let choose2 = |n: u64| n * n.saturating_sub(1) / 2;
    let together_both: u64 = table.iter().map(|&n| choose2(n)).sum();
    let together_a: u64 = rows.iter().map(|&n| choose2(n)).sum();
    let together_b: u64 = cols.iter().map(|&n| choose2(n)).sum();
    let total = choose2(d as u64);
    // Pairs split in both = total + (together in both) - (together in a)
    // - (together in b); evaluated in this order every step stays >= 0.
    let apart_both = total + together_both - together_a - together_b;
    Ok((together_both + apart_both) as f64 / total as f64)
}

/// `|M_hat - M| / |M|` in the chosen norm.
pub fn relative_error(m_hat: &DMatrix<f64>, m: &DMatrix<f64>, norm: MatrixNorm) -> Result<f64> {
    if m_hat.shape() != m.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            m_hat.shape(),
            m.shape()
        )));
    }
    let norm_of = |x: &DMatrix<f64>| -> f64 {
        match norm {
            MatrixNorm::Max => x.iter().fold(0.0f64, |a, &v| a.max(v.abs())),
            MatrixNorm::Frobenius => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    };
    let denom = norm_of(m);
    if denom == 0.0 {
        return Err(Error::invalid("reference matrix has zero norm"));
    }
    Ok(norm_of(&(m_hat - m)) / denom)
}

/// Symmetric boolean support pattern of a precision matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportMatrix {
    pub k: usize,
    entries: Vec<bool>,
}

impl SupportMatrix {
    pub fn new(k: usize, entries: Vec<bool>) -> Result<Self> {
        if entries.len() != k * k {
            return Err(Error::invalid("support entries must be k*k"));
        }
        let s = SupportMatrix { k, entries };
        for i in 0..k {
            for j in 0..k {
                if s.get(i, j) != s.get(j, i) {
                    return Err(Error::invalid(format!(
                        "support matrix asymmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(s)
    }

    /// Threshold a matrix: entry is present iff `|m_ij| > tau`.
    pub fn from_threshold(m: &DMatrix<f64>, tau: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::invalid("support source must be square"));
        }
        let k = m.nrows();
        let mut entries = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                entries.push(m[(i, j)].abs() > tau);
            }
        }
        SupportMatrix::new(k, entries)
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.k + j]
    }

    pub fn edge_count(&self) -> usize {
        let mut n = 0;
        for i in 0..self.k {
            for j in (i + 1)..self.k {
                if self.get(i, j) {
                    n += 1;
                }
            }
        }
        n
    }
}

/// Precision, recall, and F-score of edge recovery, counted over the strict
/// upper triangle (diagonals of a positive definite precision matrix are
/// always present and would inflate the score).
pub fn f_score(support_hat: &SupportMatrix, support_true: &SupportMatrix) -> Result<(f64, f64, f64)> {
    if support_hat.k != support_true.k {
        return Err(Error::invalid(format!(
            "support sizes differ: {} vs {}",
            support_hat.k, support_true.k
        )));
    }
    let k = support_hat.k;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for i in 0..k {
        for j in (i + 1)..k {
            match (support_hat.get(i, j), support_true.get(i, j)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f))
}

/// One row of evaluation output.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub rand_index: f64,
    pub rel_err_max: f64,
    pub rel_err_frobenius: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}
