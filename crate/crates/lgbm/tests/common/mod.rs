//! Shared test support: independent LP oracles and a corpus pipeline helper.
//!
//! The oracles deliberately share no code with the library solver: the
//! Big-M tableau uses Dantzig's rule in a single phase, and the vertex
//! enumerator solves every basis system directly.

#![allow(dead_code)]

use lgbm::bench::{replicate_rng, GraphSpec, RngStage};
use lgbm::cooc::count_cooccurrences;
use lgbm::corpus::{default_alpha, simulate_corpus};
use lgbm::model::{Assignment, BlockModel};
use lgbm::pmi::{empirical_pmi, sppmi, SppmiMatrix};
use nalgebra::DMatrix;

const BIG_M: f64 = 1e7;
const TOL: f64 = 1e-9;

/// Textbook Big-M simplex with Dantzig's most-negative-cost rule.
/// Solves `min c.x  s.t.  A x <= b, x >= 0` (any sign of `b`).
/// Returns the optimal objective, or `None` when infeasible/unbounded.
pub fn big_m_solve(objective: &[f64], constraints: &[(Vec<f64>, f64)]) -> Option<f64> {
    let n = objective.len();
    let m = constraints.len();

    // Column layout: structural | one slack or surplus per row | artificials.
    let needs_artificial: Vec<bool> = constraints.iter().map(|(_, b)| *b < 0.0).collect();
    let n_artificial = needs_artificial.iter().filter(|&&a| a).count();
    let ncols = n + m + n_artificial;

    let mut tableau = vec![vec![0.0f64; ncols + 1]; m];
    let mut basis = vec![0usize; m];
    let mut cost = vec![0.0f64; ncols];
    cost[..n].copy_from_slice(objective);

    let mut art_at = n + m;
    for (i, (coeffs, b)) in constraints.iter().enumerate() {
        let flip = if *b < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            tableau[i][j] = flip * coeffs[j];
        }
        tableau[i][ncols] = flip * b;
        tableau[i][n + i] = flip; // slack (+1) or surplus (-1)
        if needs_artificial[i] {
            tableau[i][art_at] = 1.0;
            cost[art_at] = BIG_M;
            basis[i] = art_at;
            art_at += 1;
        } else {
            basis[i] = n + i;
        }
    }

    for _ in 0..20_000 {
        // Reduced costs under the current basis.
        let mut reduced = cost.clone();
        for (i, row) in tableau.iter().enumerate() {
            let cb = cost[basis[i]];
            if cb != 0.0 {
                for j in 0..ncols {
                    reduced[j] -= cb * row[j];
                }
            }
        }
        // Dantzig: most negative reduced cost.
        let mut entering = None;
        let mut best = -TOL;
        for (j, &r) in reduced.iter().enumerate() {
            if r < best {
                best = r;
                entering = Some(j);
            }
        }
        let Some(col) = entering else {
            // Optimal; check artificial residue.
            for (i, &b) in basis.iter().enumerate() {
                if b >= n + m && tableau[i][ncols] > 1e-6 {
                    return None;
                }
            }
            let mut x = vec![0.0; n];
            for (i, &b) in basis.iter().enumerate() {
                if b < n {
                    x[b] = tableau[i][ncols];
                }
            }
            return Some(objective.iter().zip(&x).map(|(c, xi)| c * xi).sum());
        };
        let mut leave = None;
        let mut best_ratio = f64::INFINITY;
        for (i, row) in tableau.iter().enumerate() {
            if row[col] > TOL {
                let ratio = row[ncols] / row[col];
                if ratio < best_ratio - TOL {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        let row = leave?; // None: unbounded
        let pivot = tableau[row][col];
        for v in tableau[row].iter_mut() {
            *v /= pivot;
        }
        let pivot_row = tableau[row].clone();
        for (i, other) in tableau.iter_mut().enumerate() {
            if i != row {
                let factor = other[col];
                if factor != 0.0 {
                    for (v, pv) in other.iter_mut().zip(&pivot_row) {
                        *v -= factor * pv;
                    }
                }
            }
        }
        basis[row] = col;
    }
    None
}

/// Exhaustive basic-feasible-solution enumeration for tiny LPs:
/// `min c.x  s.t.  A x <= b, x >= 0` in slack form `[A | I] z = b, z >= 0`.
pub fn vertex_enum_solve(objective: &[f64], constraints: &[(Vec<f64>, f64)]) -> Option<f64> {
    let n = objective.len();
    let m = constraints.len();
    let total = n + m;
    let full = DMatrix::from_fn(m, total, |i, j| {
        if j < n {
            constraints[i].0[j]
        } else if j - n == i {
            1.0
        } else {
            0.0
        }
    });
    let rhs = nalgebra::DVector::from_fn(m, |i, _| constraints[i].1);

    let mut best: Option<f64> = None;
    let mut combo: Vec<usize> = (0..m).collect();
    loop {
        let basis_matrix = DMatrix::from_fn(m, m, |i, j| full[(i, combo[j])]);
        if let Some(solved) = basis_matrix.lu().solve(&rhs) {
            if solved.iter().all(|&v| v >= -1e-9) {
                let mut obj = 0.0;
                for (slot, &col) in combo.iter().enumerate() {
                    if col < n {
                        obj += objective[col] * solved[slot];
                    }
                }
                best = Some(match best {
                    Some(b) => b.min(obj),
                    None => obj,
                });
            }
        }
        // Next m-combination of 0..total in lexicographic order.
        let mut idx = m;
        loop {
            if idx == 0 {
                return best;
            }
            idx -= 1;
            if combo[idx] != idx + total - m {
                combo[idx] += 1;
                for later in (idx + 1)..m {
                    combo[later] = combo[later - 1] + 1;
                }
                break;
            }
        }
    }
}

/// The CLIME column program in `min c.x, A x <= b, x >= 0` form via the
/// split `beta = u - v`: variables `[u; v]`, 2K constraint rows.
pub fn clime_lp(q: &DMatrix<f64>, column: usize, lambda: f64) -> (Vec<f64>, Vec<(Vec<f64>, f64)>) {
    let k = q.nrows();
    let mut constraints = Vec::with_capacity(2 * k);
    for r in 0..k {
        let e_r = if r == column { 1.0 } else { 0.0 };
        let mut upper = Vec::with_capacity(2 * k);
        for j in 0..k {
            upper.push(q[(r, j)]);
        }
        for j in 0..k {
            upper.push(-q[(r, j)]);
        }
        let lower: Vec<f64> = upper.iter().map(|c| -c).collect();
        constraints.push((upper, e_r + lambda));
        constraints.push((lower, lambda - e_r));
    }
    (vec![1.0; 2 * k], constraints)
}

/// Full generative pipeline up to the SPPMI estimator.
pub fn corpus_sppmi(
    seed: u64,
    replicate: usize,
    spec: GraphSpec,
    d: usize,
    k: usize,
    p: usize,
    t: usize,
    q: usize,
) -> (BlockModel, SppmiMatrix) {
    let mut rng = replicate_rng(seed, replicate, RngStage::Model);
    let graph = spec.generate(k, &mut rng).expect("valid graph spec");
    let assignment = Assignment::even(d, k).expect("K divides d in test settings");
    let model = BlockModel::build(graph, assignment, 0.25, 0.5, &mut rng).expect("valid model");
    let mut erng = replicate_rng(seed, replicate, RngStage::Embeddings);
    let v = model.sample_embeddings(p, &mut erng);
    let mut crng = replicate_rng(seed, replicate, RngStage::Corpus);
    let alpha = default_alpha(d, p).expect("alpha in (0,1)");
    let tokens = simulate_corpus(&v, t, alpha, &mut crng);
    let cooc = count_cooccurrences(std::slice::from_ref(&tokens), q, d).expect("valid corpus");
    let s = sppmi(&empirical_pmi(&cooc).expect("nonempty corpus"), -5.0).expect("finite eta");
    (model, s)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

pub fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
