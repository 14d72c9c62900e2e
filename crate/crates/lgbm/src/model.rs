//! Ground-truth block graphical models: cluster-level precision graphs,
//! code-to-cluster assignments, and the covariance decomposition
//! `Sigma = A Q A' + Gamma` used to sample latent embedding vectors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// d x p matrix whose rows are the latent embedding vectors of the codes.
pub type EmbeddingMatrix = DMatrix<f64>;

/// Cluster-level precision matrix `O` (symmetric positive definite, K x K).
#[derive(Debug, Clone)]
pub struct PrecisionGraph {
    pub k: usize,
    pub o: DMatrix<f64>,
}

impl PrecisionGraph {
    /// Independent graph: `O = c * I_K`.
    pub fn independent(k: usize, c: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("number of clusters K must be >= 1"));
        }
        if !(c > 0.0) {
            return Err(Error::invalid(format!("diagonal c must be > 0, got {c}")));
        }
        Ok(PrecisionGraph {
            k,
            o: DMatrix::identity(k, k) * c,
        })
    }

    /// Erdős–Rényi graph: edges added independently with probability `prob`
    /// (upper triangle, row-major draw order), then
    /// `O = c * Adj + (|lambda_min(c * Adj)| + c1) * I` so that the smallest
    /// eigenvalue of `O` is at least `c1`.
    pub fn erdos_renyi<R: Rng + ?Sized>(
        k: usize,
        prob: f64,
        c: f64,
        c1: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("number of clusters K must be >= 1"));
        }
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::invalid(format!(
                "edge probability must be in [0, 1], got {prob}"
            )));
        }
        if !(c > 0.0) || !(c1 > 0.0) {
            return Err(Error::invalid(format!(
                "edge weight c and diagonal shift c1 must be > 0, got c={c}, c1={c1}"
            )));
        }
        let mut scaled = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in (i + 1)..k {
                if rng.random_bool(prob) {
                    scaled[(i, j)] = c;
                    scaled[(j, i)] = c;
                }
            }
        }
        let lambda_min = scaled
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        let shift = lambda_min.abs() + c1;
        let mut o = scaled;
        for i in 0..k {
            o[(i, i)] += shift;
        }
        Ok(PrecisionGraph { k, o })
    }

    /// Number of off-diagonal edges (nonzero upper-triangle entries).
    pub fn edge_count(&self) -> usize {
        let mut n = 0;
        for i in 0..self.k {
            for j in (i + 1)..self.k {
                if self.o[(i, j)] != 0.0 {
                    n += 1;
                }
            }
        }
        n
    }
}

/// Partition of `d` codes into `K` clusters, stored as 0-based labels.
///
/// The assignment matrix view `A` has `A[i][k] = 1` iff code `i` belongs to
/// cluster `k`; external formats (JSON, CSV) use 1-based cluster ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub d: usize,
    pub k: usize,
    labels: Vec<usize>,
}

impl Assignment {
    /// Even split into contiguous blocks of size `d / k`; errors unless `k`
    /// divides `d`.
    pub fn even(d: usize, k: usize) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::invalid("d and K must be >= 1"));
        }
        if k > d {
            return Err(Error::invalid(format!("K={k} exceeds d={d}")));
        }
        if d % k != 0 {
            return Err(Error::invalid(format!(
                "K must divide d for an even assignment: d={d}, K={k}"
            )));
        }
        let m = d / k;
        let labels = (0..d).map(|i| i / m).collect();
        Ok(Assignment { d, k, labels })
    }

    /// As-even-as-possible split into contiguous blocks: the first `d mod K`
    /// clusters get `ceil(d/K)` codes, the rest `floor(d/K)`.
    pub fn balanced(d: usize, k: usize) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::invalid("d and K must be >= 1"));
        }
        if k > d {
            return Err(Error::invalid(format!("K={k} exceeds d={d}")));
        }
        let base = d / k;
        let extra = d % k;
        let mut labels = Vec::with_capacity(d);
        for cluster in 0..k {
            let size = if cluster < extra { base + 1 } else { base };
            labels.extend(std::iter::repeat(cluster).take(size));
        }
        Ok(Assignment { d, k, labels })
    }

    /// Build from explicit 0-based labels; every cluster id in `0..K` must
    /// occur at least once, where `K = max(label) + 1`.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("labels must be nonempty"));
        }
        let k = labels.iter().max().unwrap() + 1;
        let mut seen = vec![false; k];
        for &g in &labels {
            seen[g] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::invalid("cluster ids must cover 0..K without gaps"));
        }
        Ok(Assignment {
            d: labels.len(),
            k,
            labels,
        })
    }

    /// 0-based cluster id of code `i`.
    pub fn cluster_of(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &g in &self.labels {
            sizes[g] += 1;
        }
        sizes
    }

    /// Member codes per cluster, in index order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.k];
        for (i, &g) in self.labels.iter().enumerate() {
            groups[g].push(i);
        }
        groups
    }

    /// Dense d x K assignment matrix with 0/1 entries.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.d, self.k);
        for (i, &g) in self.labels.iter().enumerate() {
            a[(i, g)] = 1.0;
        }
        a
    }
}

/// Full ground-truth model: precision graph `O`, its inverse `Q`, the
/// assignment, idiosyncratic variances `gamma`, and `Sigma = A Q A' + Gamma`.
#[derive(Debug, Clone)]
pub struct BlockModel {
    pub graph: PrecisionGraph,
    pub assignment: Assignment,
    pub q: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Condition-number cutoff above which `O` is treated as numerically singular.
const MAX_CONDITION: f64 = 1e12;

impl BlockModel {
    /// Assemble a model from a graph and assignment, drawing
    /// `gamma_i ~ Unif[gamma_low, gamma_high]` independently. Codes in
    /// singleton clusters get `gamma_i = 0` (feasibility of the
    /// decomposition).
    pub fn build<R: Rng + ?Sized>(
        graph: PrecisionGraph,
        assignment: Assignment,
        gamma_low: f64,
        gamma_high: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0 <= gamma_low && gamma_low <= gamma_high) {
            return Err(Error::invalid(format!(
                "gamma bounds must satisfy 0 <= low <= high, got [{gamma_low}, {gamma_high}]"
            )));
        }
        if graph.k != assignment.k {
            return Err(Error::invalid(format!(
                "graph has K={} clusters but assignment has K={}",
                graph.k, assignment.k
            )));
        }
        let eigen = graph.o.clone().symmetric_eigen();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &ev in eigen.eigenvalues.iter() {
            lo = lo.min(ev);
            hi = hi.max(ev);
        }
        if lo <= 0.0 || hi / lo > MAX_CONDITION {
            return Err(Error::SingularMatrix(format!(
                "precision graph O is not usably positive definite \
                 (eigenvalue range [{lo:.3e}, {hi:.3e}])"
            )));
        }
        let chol = nalgebra::Cholesky::new(graph.o.clone()).ok_or_else(|| {
            Error::SingularMatrix("Cholesky factorization of O failed".into())
        })?;
        let q = chol.inverse();

        let d = assignment.d;
        let sizes = assignment.cluster_sizes();
        let mut gamma = DVector::zeros(d);
        for i in 0..d {
            let draw = rng.random_range(gamma_low..=gamma_high);
            gamma[i] = if sizes[assignment.cluster_of(i)] == 1 {
                0.0
            } else {
                draw
            };
        }

        let sigma = DMatrix::from_fn(d, d, |i, j| {
            let block = q[(assignment.cluster_of(i), assignment.cluster_of(j))];
            if i == j {
                block + gamma[i]
            } else {
                block
            }
        });

        Ok(BlockModel {
            graph,
            assignment,
            q,
            gamma,
            sigma,
        })
    }

    pub fn d(&self) -> usize {
        self.assignment.d
    }

    pub fn k(&self) -> usize {
        self.graph.k
    }

    /// Sample the d x p embedding matrix: column `l` is `A z_l + e_l` with
    /// `z_l ~ N(0, Q)` and `e_l ~ N(0, Gamma)`, so columns are i.i.d.
    /// `N(0, Sigma)`.
    pub fn sample_embeddings<R: Rng + ?Sized>(&self, p: usize, rng: &mut R) -> EmbeddingMatrix {
        assert!(p >= 1, "embedding dimension p must be >= 1");
        let (d, k) = (self.d(), self.k());
        let lq = nalgebra::Cholesky::new(self.q.clone())
            .expect("Q = O^-1 of a well-conditioned O is positive definite")
            .l();
        let sqrt_gamma: Vec<f64> = self.gamma.iter().map(|g| g.sqrt()).collect();

        let mut v = DMatrix::zeros(d, p);
        let mut g = DVector::zeros(k);
        for l in 0..p {
            for gi in g.iter_mut() {
                *gi = rng.sample(StandardNormal);
            }
            let z = &lq * &g;
            for i in 0..d {
                let noise: f64 = rng.sample(StandardNormal);
                v[(i, l)] = z[self.assignment.cluster_of(i)] + sqrt_gamma[i] * noise;
            }
        }
        v
    }

    /// Cluster gap of `Sigma` induced by the true partition (Definition of
    /// feasibility): min over cross-cluster code pairs of the best witness
    /// difference `max_{l != i,j} |Sigma_il - Sigma_jl|`. Returns infinity
    /// when there is a single cluster.
    pub fn feasibility_gap(&self) -> f64 {
        let d = self.d();
        let mut gap = f64::INFINITY;
        for i in 0..d {
            for j in (i + 1)..d {
                if self.assignment.cluster_of(i) == self.assignment.cluster_of(j) {
                    continue;
                }
                let mut witness = 0.0f64;
                for l in 0..d {
                    if l == i || l == j {
                        continue;
                    }
                    witness = witness.max((self.sigma[(i, l)] - self.sigma[(j, l)]).abs());
                }
                gap = gap.min(witness);
            }
        }
        gap
    }
}

/// Separation of a cluster-level matrix: `min_{i != j} max_{k != i,j}
/// |Q_ik - Q_jk|`. Zero witnesses (K <= 2) give a zero gap.
pub fn cluster_gap(q: &DMatrix<f64>) -> f64 {
    let k = q.nrows();
    let mut gap = f64::INFINITY;
    for i in 0..k {
        for j in (i + 1)..k {
            let mut witness = 0.0f64;
            for c in 0..k {
                if c == i || c == j {
                    continue;
                }
                witness = witness.max((q[(i, c)] - q[(j, c)]).abs());
            }
            gap = gap.min(witness);
        }
    }
    if gap.is_infinite() {
        0.0
    } else {
        gap
    }
}

/// JSON manifest form of a block model (1-based labels, row-major `O`).
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelManifest {
    pub k: usize,
    pub d: usize,
    pub labels: Vec<usize>,
    pub o: Vec<f64>,
    pub gamma: Vec<f64>,
    pub seed: u64,
}

impl ModelManifest {
    pub fn from_model(model: &BlockModel, seed: u64) -> Self {
        let k = model.k();
        let mut o = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                o.push(model.graph.o[(i, j)]);
            }
        }
        ModelManifest {
            k,
            d: model.d(),
            labels: model.assignment.labels().iter().map(|&g| g + 1).collect(),
            o,
            gamma: model.gamma.iter().copied().collect(),
            seed,
        }
    }

    /// Rebuild the full model; `Q` and `Sigma` are recomputed from `O`,
    /// labels, and `gamma`, so a manifest round-trip is exact.
    pub fn into_model(self) -> Result<(BlockModel, u64)> {
        if self.o.len() != self.k * self.k {
            return Err(Error::invalid(format!(
                "O has {} entries, expected {}",
                self.o.len(),
                self.k * self.k
            )));
        }
        if self.labels.len() != self.d || self.gamma.len() != self.d {
            return Err(Error::invalid("labels and gamma must have length d"));
        }
        let o = DMatrix::from_fn(self.k, self.k, |i, j| self.o[i * self.k + j]);
        let graph = PrecisionGraph { k: self.k, o };
        let labels0: Vec<usize> = self
            .labels
            .iter()
            .map(|&g| {
                if g == 0 || g > self.k {
                    Err(Error::invalid(format!("label {g} out of range 1..={}", self.k)))
                } else {
                    Ok(g - 1)
                }
            })
            .collect::<Result<_>>()?;
        let assignment = Assignment::from_labels(labels0)?;
        if assignment.k != self.k {
            return Err(Error::invalid("labels do not cover all K clusters"));
        }
        let chol = nalgebra::Cholesky::new(graph.o.clone())
            .ok_or_else(|| Error::SingularMatrix("manifest O is not positive definite".into()))?;
        let q = chol.inverse();
        let gamma = DVector::from_vec(self.gamma);
        let sigma = DMatrix::from_fn(self.d, self.d, |i, j| {
            let block = q[(assignment.cluster_of(i), assignment.cluster_of(j))];
            if i == j {
                block + gamma[i]
            } else {
                block
            }
        });
        let seed = self.seed;
        Ok((
            BlockModel {
                graph,
                assignment,
                q,
                gamma,
                sigma,
            },
            seed,
        ))
    }
}

pub fn write_model_json(path: &std::path::Path, model: &BlockModel, seed: u64) -> Result<()> {
    let manifest = ModelManifest::from_model(model, seed);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::NumericalFailure(format!("model serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_model_json(path: &std::path::Path) -> Result<(BlockModel, u64)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: ModelManifest = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    manifest.into_model()
}
