//! Code clustering from the SPPMI matrix by iterative peeling (the COD
//! algorithm): the distance between codes `j, j'` is the largest witnessed
//! row difference `max_{c != j,j'} |S(j,c) - S(j',c)|`, computed once on the
//! full matrix; groups are peeled off greedily around minimum-distance
//! anchor pairs.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::rand_index;
use crate::model::Assignment;
use crate::pmi::SppmiMatrix;

/// Disjoint cover of `0..d` by nonempty groups, stored as 0-based labels in
/// group-emission order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    /// Build from 0-based labels; ids are remapped to first-appearance order
    /// so any labeling with nonempty classes is accepted.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("partition labels must be nonempty"));
        }
        let mut remap = std::collections::HashMap::new();
        let mut canonical = Vec::with_capacity(labels.len());
        for &g in &labels {
            let next = remap.len();
            let id = *remap.entry(g).or_insert(next);
            canonical.push(id);
        }
        Ok(Partition {
            k: remap.len(),
            labels: canonical,
        })
    }

    /// Build from explicit groups; they must disjointly cover `0..d`.
    pub fn from_groups(groups: &[Vec<usize>]) -> Result<Self> {
        let d: usize = groups.iter().map(|g| g.len()).sum();
        if d == 0 {
            return Err(Error::invalid("partition must cover at least one code"));
        }
        let mut labels = vec![usize::MAX; d];
        for (gid, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::invalid(format!("group {gid} is empty")));
            }
            for &i in group {
                if i >= d {
                    return Err(Error::invalid(format!("code {i} out of range 0..{d}")));
                }
                if labels[i] != usize::MAX {
                    return Err(Error::invalid(format!("code {i} assigned twice")));
                }
                labels[i] = gid;
            }
        }
        Ok(Partition {
            labels,
            k: groups.len(),
        })
    }

    pub fn from_assignment(a: &Assignment) -> Self {
        Partition::from_labels(a.labels().to_vec()).expect("assignment labels are a valid cover")
    }

    pub fn d(&self) -> usize {
        self.labels.len()
    }

    pub fn group_count(&self) -> usize {
        self.k
    }

    pub fn label_of(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.k];
        for (i, &g) in self.labels.iter().enumerate() {
            groups[g].push(i);
        }
        groups
    }

    /// True when the two partitions place exactly the same codes together,
    /// regardless of group numbering.
    pub fn same_grouping(&self, other: &Partition) -> bool {
        self.d() == other.d()
            && self.k == other.k
            && rand_index(self, other).map(|ri| ri == 1.0).unwrap_or(false)
    }
}

/// COD row distance between codes `j` and `j'` over the full witness set.
/// Requires `d >= 3` so at least one witness exists.
pub fn cod_distance(s: &SppmiMatrix, j: usize, j2: usize) -> Result<f64> {
    if s.d < 3 {
        return Err(Error::invalid(format!(
            "COD distance needs d >= 3 witnesses, got d = {}",
            s.d
        )));
    }
    if j == j2 || j >= s.d || j2 >= s.d {
        return Err(Error::invalid(format!(
            "invalid code pair ({j}, {j2}) for d = {}",
            s.d
        )));
    }
    let mut witness = 0.0f64;
    for c in 0..s.d {
        if c != j && c != j2 {
            witness = witness.max((s.values[(j, c)] - s.values[(j2, c)]).abs());
        }
    }
    Ok(witness)
}

/// All pairwise COD distances; the diagonal is zero by convention, and with
/// `d = 2` the witness set is empty so the off-diagonal distance is zero.
fn pairwise_distances(s: &SppmiMatrix) -> DMatrix<f64> {
    let d = s.d;
    let mut dist = DMatrix::zeros(d, d);
    for j in 0..d {
        for j2 in (j + 1)..d {
            let mut witness = 0.0f64;
            for c in 0..d {
                if c != j && c != j2 {
                    witness = witness.max((s.values[(j, c)] - s.values[(j2, c)]).abs());
                }
            }
            dist[(j, j2)] = witness;
            dist[(j2, j)] = witness;
        }
    }
    dist
}

/// The COD peeling algorithm at threshold `alpha`.
pub fn cod_cluster(s: &SppmiMatrix, alpha: f64) -> Result<Partition> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    let d = s.d;
    if d == 0 {
        return Err(Error::invalid("cannot cluster an empty matrix"));
    }
    let dist = pairwise_distances(s);
    let mut alive = vec![true; d];
    let mut remaining = d;
    let mut groups: Vec<Vec<usize>> = Vec::new();

    while remaining > 0 {
        let members: Vec<usize> = (0..d).filter(|&i| alive[i]).collect();
        if members.len() == 1 {
            groups.push(members);
            break;
        }
        // Lexicographically first minimizing pair (strict improvement only).
        let (mut best_j, mut best_j2, mut best) = (members[0], members[1], f64::INFINITY);
        for (a_idx, &j) in members.iter().enumerate() {
            for &j2 in &members[a_idx + 1..] {
                if dist[(j, j2)] < best {
                    best = dist[(j, j2)];
                    best_j = j;
                    best_j2 = j2;
                }
            }
        }
        let group: Vec<usize> = if best > alpha {
            vec![best_j]
        } else {
            members
                .iter()
                .copied()
                .filter(|&c| dist[(best_j, c)].min(dist[(best_j2, c)]) <= alpha)
                .collect()
        };
        for &i in &group {
            alive[i] = false;
        }
        remaining -= group.len();
        groups.push(group);
    }
    Partition::from_groups(&groups)
}

/// One evaluated grid point of the alpha tuning sweep.
#[derive(Debug, Clone)]
pub struct AlphaTracePoint {
    pub c: f64,
    pub alpha: f64,
    pub stability: f64,
    pub partition: Partition,
}

/// Result of [`tune_alpha`].
#[derive(Debug, Clone)]
pub struct AlphaTuning {
    pub c: f64,
    pub alpha: f64,
    pub partition: Partition,
    pub trace: Vec<AlphaTracePoint>,
}

/// Evaluate `alpha = c * sqrt(ln d / p)` over the multiplier grid and pick
/// the most stable point: stability of a point is the Rand index between its
/// partition and its successor's (the last point pairs with its
/// predecessor). Ties go to the smaller multiplier.
pub fn tune_alpha(s: &SppmiMatrix, p: usize, grid: &[f64]) -> Result<AlphaTuning> {
    if grid.is_empty() {
        return Err(Error::invalid("alpha grid must be nonempty"));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("alpha grid must be sorted ascending"));
    }
    if p == 0 {
        return Err(Error::invalid("embedding dimension p must be >= 1"));
    }
    let scale = ((s.d as f64).ln() / p as f64).sqrt();
    let partitions: Vec<(f64, f64, Partition)> = grid
        .par_iter()
        .map(|&c| {
            let alpha = c * scale;
            cod_cluster(s, alpha).map(|p| (c, alpha, p))
        })
        .collect::<Result<_>>()?;

    let n = partitions.len();
    let mut trace = Vec::with_capacity(n);
    for i in 0..n {
        let stability = if n == 1 {
            1.0
        } else {
            let neighbor = if i + 1 < n { i + 1 } else { i - 1 };
            rand_index(&partitions[i].2, &partitions[neighbor].2)?
        };
        trace.push(AlphaTracePoint {
            c: partitions[i].0,
            alpha: partitions[i].1,
            stability,
            partition: partitions[i].2.clone(),
        });
    }
    let mut best = 0usize;
    for i in 1..n {
        if trace[i].stability > trace[best].stability {
            best = i;
        }
    }
    Ok(AlphaTuning {
        c: trace[best].c,
        alpha: trace[best].alpha,
        partition: trace[best].partition.clone(),
        trace,
    })
}

/// Write a partition as CSV with a `code_id,cluster_id` header (1-based).
pub fn write_partition(path: &Path, p: &Partition) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "code_id,cluster_id").map_err(|e| Error::io(path, e))?;
    for (i, &g) in p.labels().iter().enumerate() {
        writeln!(w, "{},{}", i + 1, g + 1).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a partition CSV written by [`write_partition`]. Codes must appear
/// exactly once, in any order; cluster ids may be arbitrary positive
/// integers and are canonicalized.
pub fn read_partition(path: &Path) -> Result<Partition> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut rows: Vec<(usize, usize)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (lineno == 1 && trimmed == "code_id,cluster_id") {
            continue;
        }
        let mut fields = trimmed.split(',');
        let code: usize = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| Error::parse(path, lineno, "invalid code_id"))?;
        let cluster: usize = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| Error::parse(path, lineno, "invalid cluster_id"))?;
        if fields.next().is_some() {
            return Err(Error::parse(path, lineno, "expected two columns"));
        }
        if code == 0 || cluster == 0 {
            return Err(Error::parse(path, lineno, "ids are 1-based"));
        }
        rows.push((code - 1, cluster));
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 1, "no partition rows"));
    }
    let d = rows.len();
    let mut labels = vec![usize::MAX; d];
    for (code, cluster) in rows {
        if code >= d {
            return Err(Error::parse(
                path,
                1,
                format!("code id {} exceeds row count {d}", code + 1),
            ));
        }
        if labels[code] != usize::MAX {
            return Err(Error::parse(path, 1, format!("code {} repeated", code + 1)));
        }
        labels[code] = cluster;
    }
    Partition::from_labels(labels)
}
