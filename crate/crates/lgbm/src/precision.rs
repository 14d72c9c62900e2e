//! Cluster-level covariance refinement and precision estimation: average the
//! SPPMI entries over recovered clusters into `Q_hat`, solve the CLIME
//! column programs for `O_hat`, then reconstruct the idiosyncratic variances
//! and the code-level precision matrix through the Woodbury identity.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::Partition;
use crate::error::{Error, Result};
use crate::metrics::SupportMatrix;
use crate::pmi::{write_dense_csv, SppmiMatrix};
use crate::simplex::{solve, Lp, LpFailure, Relation};

/// Cluster-level estimate of the covariance `Q` (symmetric K x K).
#[derive(Debug, Clone, PartialEq)]
pub struct QHat {
    pub k: usize,
    pub values: DMatrix<f64>,
}

impl QHat {
    /// Wrap an explicit matrix (e.g. a ground-truth `Q` in oracle tests).
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::invalid("QHat must be square"));
        }
        Ok(QHat {
            k: values.nrows(),
            values,
        })
    }
}

/// Average the SPPMI entries over cluster blocks: cross blocks use all
/// ordered pairs, diagonal blocks of size > 1 use off-diagonal pairs only,
/// and singleton blocks keep their diagonal entry.
pub fn refine_q(s: &SppmiMatrix, partition: &Partition) -> Result<QHat> {
    if partition.d() != s.d {
        return Err(Error::invalid(format!(
            "partition covers {} codes but SPPMI has {}",
            partition.d(),
            s.d
        )));
    }
    let groups = partition.groups();
    let k = groups.len();
    let mut values = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let v = if a != b {
                let mut acc = 0.0;
                for &w in &groups[a] {
                    for &w2 in &groups[b] {
                        acc += s.values[(w, w2)];
                    }
                }
                acc / (groups[a].len() * groups[b].len()) as f64
            } else if groups[a].len() > 1 {
                let mut acc = 0.0;
                for &w in &groups[a] {
                    for &w2 in &groups[a] {
                        if w != w2 {
                            acc += s.values[(w, w2)];
                        }
                    }
                }
                acc / (groups[a].len() * (groups[a].len() - 1)) as f64
            } else {
                let w = groups[a][0];
                s.values[(w, w)]
            };
            values[(a, b)] = v;
            values[(b, a)] = v;
        }
    }
    Ok(QHat { k, values })
}

/// No-averaging baseline: the first code (by index) of each cluster
/// represents it, so `Q_hat[k][k'] = S(rep_k, rep_k')` including the raw
/// diagonal entries.
pub fn representative_q(s: &SppmiMatrix, partition: &Partition) -> Result<QHat> {
    if partition.d() != s.d {
        return Err(Error::invalid(format!(
            "partition covers {} codes but SPPMI has {}",
            partition.d(),
            s.d
        )));
    }
    let reps: Vec<usize> = partition
        .groups()
        .iter()
        .map(|g| *g.iter().min().expect("groups are nonempty"))
        .collect();
    let k = reps.len();
    let values = DMatrix::from_fn(k, k, |a, b| s.values[(reps[a], reps[b])]);
    Ok(QHat { k, values })
}

/// Per-column CLIME solve report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnDiagnostic {
    pub column: usize,
    /// `|Q_hat beta - e_k|_inf` of the returned column.
    pub residual: f64,
    /// l1 objective attained.
    pub l1: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClimeDiagnostics {
    pub columns: Vec<ColumnDiagnostic>,
}

/// Solve one CLIME column: `min |beta|_1  s.t.  |Q_hat beta - e_k|_inf <=
/// lambda`, via the split `beta = u - v` with `u, v >= 0` (2K inequality
/// rows over 2K variables).
pub fn clime_column(q_hat: &QHat, column: usize, lambda: f64) -> Result<DVector<f64>> {
    let (beta, _) = clime_column_inner(q_hat, column, lambda)?;
    Ok(beta)
}

fn clime_column_inner(
    q_hat: &QHat,
    column: usize,
    lambda: f64,
) -> Result<(DVector<f64>, ColumnDiagnostic)> {
    let k = q_hat.k;
    if column >= k {
        return Err(Error::invalid(format!(
            "column {column} out of range for K = {k}"
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be > 0, got {lambda}")));
    }
    let mut constraints = Vec::with_capacity(2 * k);
    for r in 0..k {
        let e_r = if r == column { 1.0 } else { 0.0 };
        let mut upper = Vec::with_capacity(2 * k);
        for j in 0..k {
            upper.push(q_hat.values[(r, j)]);
        }
        for j in 0..k {
            upper.push(-q_hat.values[(r, j)]);
        }
        let lower: Vec<f64> = upper.iter().map(|c| -c).collect();
        // Q beta - e_r <= lambda  and  e_r - Q beta <= lambda.
        constraints.push((upper, Relation::Le, e_r + lambda));
        constraints.push((lower, Relation::Le, lambda - e_r));
    }
    let lp = Lp {
        objective: vec![1.0; 2 * k],
        constraints,
    };
    let solution = solve(&lp).map_err(|failure| match failure {
        LpFailure::IterationLimit => Error::NumericalFailure(format!(
            "CLIME column {column}: simplex iteration cap exceeded"
        )),
        other => Error::NumericalFailure(format!("CLIME column {column}: LP {other}")),
    })?;
    let beta = DVector::from_fn(k, |j, _| solution.x[j] - solution.x[k + j]);
    let residual = {
        let r = &q_hat.values * &beta;
        let mut worst = 0.0f64;
        for i in 0..k {
            let e_i = if i == column { 1.0 } else { 0.0 };
            worst = worst.max((r[i] - e_i).abs());
        }
        worst
    };
    Ok((
        beta,
        ColumnDiagnostic {
            column,
            residual,
            l1: solution.objective,
            iterations: solution.iterations,
        },
    ))
}

/// Solve all K CLIME columns (in parallel) and symmetrize by keeping, for
/// each pair, the entry of smaller magnitude.
pub fn clime(q_hat: &QHat, lambda: f64) -> Result<(DMatrix<f64>, ClimeDiagnostics)> {
    let k = q_hat.k;
    let solved: Vec<(DVector<f64>, ColumnDiagnostic)> = (0..k)
        .into_par_iter()
        .map(|col| clime_column_inner(q_hat, col, lambda))
        .collect::<Result<_>>()?;

    let mut raw = DMatrix::zeros(k, k);
    let mut columns = Vec::with_capacity(k);
    for (col, (beta, diag)) in solved.into_iter().enumerate() {
        raw.set_column(col, &beta);
        columns.push(diag);
    }
    let mut o_hat = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let (a, b) = (raw[(i, j)], raw[(j, i)]);
            let keep = if a.abs() <= b.abs() { a } else { b };
            o_hat[(i, j)] = keep;
            o_hat[(j, i)] = keep;
        }
    }
    Ok((o_hat, ClimeDiagnostics { columns }))
}

/// Support pattern of `o_hat`: entries with `|o_hat_ij| > tau`.
pub fn support(o_hat: &DMatrix<f64>, tau: f64) -> Result<SupportMatrix> {
    if tau < 0.0 {
        return Err(Error::invalid(format!("tau must be >= 0, got {tau}")));
    }
    SupportMatrix::from_threshold(o_hat, tau)
}

/// `gamma_i = max(0, S_ii - Q_hat[g(i)][g(i)])` for codes in clusters of
/// size > 1; singleton clusters are pinned at zero (feasibility).
pub fn estimate_gamma(s: &SppmiMatrix, q_hat: &QHat, partition: &Partition) -> Result<DVector<f64>> {
    if partition.d() != s.d || partition.group_count() != q_hat.k {
        return Err(Error::invalid("partition, SPPMI, and QHat shapes disagree"));
    }
    let sizes: Vec<usize> = partition.groups().iter().map(|g| g.len()).collect();
    Ok(DVector::from_fn(s.d, |i, _| {
        let g = partition.label_of(i);
        if sizes[g] == 1 {
            0.0
        } else {
            (s.values[(i, i)] - q_hat.values[(g, g)]).max(0.0)
        }
    }))
}

/// Code-level precision via the Woodbury identity:
/// `Omega = D^-1 - D^-1 A (O_hat + A' D^-1 A)^-1 A' D^-1` with
/// `D = diag(max(gamma_i, eps_floor))`.
pub fn estimate_omega(
    o_hat: &DMatrix<f64>,
    gamma_hat: &DVector<f64>,
    partition: &Partition,
    eps_floor: f64,
) -> Result<DMatrix<f64>> {
    if !(eps_floor > 0.0) {
        return Err(Error::invalid(format!(
            "eps_floor must be > 0, got {eps_floor}"
        )));
    }
    let d = partition.d();
    let k = partition.group_count();
    if gamma_hat.len() != d || o_hat.nrows() != k || o_hat.ncols() != k {
        return Err(Error::invalid("omega input shapes disagree"));
    }
    let inv_d: Vec<f64> = (0..d).map(|i| 1.0 / gamma_hat[i].max(eps_floor)).collect();

    // A' D^-1 A is diagonal: entry k is the sum of 1/D_i over cluster k.
    let mut inner = o_hat.clone();
    for (i, &w) in inv_d.iter().enumerate() {
        let g = partition.label_of(i);
        inner[(g, g)] += w;
    }
    let inner_inv = inner
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("inner K x K solve is singular".into()))?;
    let inner_inv = (&inner_inv + inner_inv.transpose()) * 0.5;

    let omega = DMatrix::from_fn(d, d, |i, j| {
        let base = if i == j { inv_d[i] } else { 0.0 };
        base - inv_d[i] * inner_inv[(partition.label_of(i), partition.label_of(j))] * inv_d[j]
    });
    Ok(omega)
}

/// One evaluated grid point of the lambda tuning sweep.
#[derive(Debug, Clone)]
pub struct LambdaTracePoint {
    pub c: f64,
    pub lambda: f64,
    /// Max-norm change from the previous grid point; `None` on the first.
    pub change: Option<f64>,
}

/// Result of [`tune_lambda`].
#[derive(Debug, Clone)]
pub struct LambdaTuning {
    pub c: f64,
    pub lambda: f64,
    pub o_hat: DMatrix<f64>,
    pub diagnostics: ClimeDiagnostics,
    pub trace: Vec<LambdaTracePoint>,
}

/// Evaluate `lambda = c * sqrt(ln d / p)` over the multiplier grid and pick
/// the most stable point: the one whose estimate moved least (in max norm)
/// from its predecessor. The first grid point has no predecessor and cannot
/// win; ties go to the smaller multiplier. A single-point grid returns that
/// point with stability undefined.
pub fn tune_lambda(q_hat: &QHat, d: usize, p: usize, grid: &[f64]) -> Result<LambdaTuning> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda grid must be nonempty"));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("lambda grid must be sorted ascending"));
    }
    if d == 0 || p == 0 {
        return Err(Error::invalid("d and p must be >= 1"));
    }
    let scale = ((d as f64).ln() / p as f64).sqrt();
    let estimates: Vec<(f64, f64, DMatrix<f64>, ClimeDiagnostics)> = grid
        .par_iter()
        .map(|&c| {
            let lambda = c * scale;
            clime(q_hat, lambda).map(|(o, diag)| (c, lambda, o, diag))
        })
        .collect::<Result<_>>()?;

    let mut trace = Vec::with_capacity(estimates.len());
    for (i, (c, lambda, o, _)) in estimates.iter().enumerate() {
        let change = if i == 0 {
            None
        } else {
            let prev = &estimates[i - 1].2;
            Some((o - prev).iter().fold(0.0f64, |a, &v| a.max(v.abs())))
        };
        trace.push(LambdaTracePoint {
            c: *c,
            lambda: *lambda,
            change,
        });
    }
    let best = if estimates.len() == 1 {
        0
    } else {
        let mut best = 1usize;
        for i in 2..trace.len() {
            if trace[i].change.unwrap() < trace[best].change.unwrap() {
                best = i;
            }
        }
        best
    };
    let (c, lambda, o_hat, diagnostics) = estimates[best].clone();
    Ok(LambdaTuning {
        c,
        lambda,
        o_hat,
        diagnostics,
        trace,
    })
}

/// Full output of the estimation stage.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub partition: Partition,
    pub q_hat: QHat,
    pub o_hat: DMatrix<f64>,
    pub support: SupportMatrix,
    pub gamma_hat: DVector<f64>,
    pub omega_hat: DMatrix<f64>,
    pub lambda: f64,
    pub diagnostics: ClimeDiagnostics,
}

/// Sidecar metadata written with an estimation directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationMeta {
    pub lambda: f64,
    pub tau: f64,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub q_mode: String,
    pub residuals: Vec<f64>,
    pub objectives: Vec<f64>,
}

/// Write `q_hat.csv`, `o_hat.csv`, `support.csv`, `gamma.csv`, `omega.csv`,
/// and `meta.json` into `dir` (created if missing).
pub fn write_estimation(dir: &Path, result: &EstimationResult, meta: &EstimationMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_dense_csv(&dir.join("q_hat.csv"), &result.q_hat.values)?;
    write_dense_csv(&dir.join("o_hat.csv"), &result.o_hat)?;
    let k = result.support.k;
    let support_matrix = DMatrix::from_fn(k, k, |i, j| {
        if result.support.get(i, j) {
            1.0
        } else {
            0.0
        }
    });
    write_dense_csv(&dir.join("support.csv"), &support_matrix)?;
    let gamma = DMatrix::from_fn(result.gamma_hat.len(), 1, |i, _| result.gamma_hat[i]);
    write_dense_csv(&dir.join("gamma.csv"), &gamma)?;
    write_dense_csv(&dir.join("omega.csv"), &result.omega_hat)?;
    crate::cluster::write_partition(&dir.join("partition.csv"), &result.partition)?;
    let path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::NumericalFailure(format!("meta serialization failed: {e}")))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}
