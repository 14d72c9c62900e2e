//! Dense two-phase simplex solver with Bland's rule.
//!
//! Solves `min c.x  s.t.  A x {<=,>=,=} b, x >= 0` on a dense tableau.
//! Bland's smallest-index pivot rule makes the solver immune to cycling and
//! fully deterministic across platforms, which matters more than speed at
//! the problem sizes the CLIME columns produce (a few hundred rows).

/// Constraint sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// A linear program in standard minimization form over `x >= 0`.
#[derive(Debug, Clone)]
pub struct Lp {
    pub objective: Vec<f64>,
    pub constraints: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpFailure {
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl std::fmt::Display for LpFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LpFailure::Infeasible => write!(f, "infeasible"),
            LpFailure::Unbounded => write!(f, "unbounded"),
            LpFailure::IterationLimit => write!(f, "iteration limit exceeded"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;

struct Tableau {
    /// m rows of length ncols + 1; the last entry is the rhs.
    rows: Vec<Vec<f64>>,
    /// Column index of the basic variable of each row.
    basis: Vec<usize>,
    n_structural: usize,
    /// Columns at or past this index are artificial.
    artificial_start: usize,
    ncols: usize,
    iterations: usize,
    max_iterations: usize,
}

impl Tableau {
    fn build(lp: &Lp) -> Result<Tableau, LpFailure> {
        let n = lp.objective.len();
        let m = lp.constraints.len();

        // Normalize rows to nonnegative rhs, then count extra columns.
        let mut rows_spec: Vec<(Vec<f64>, Relation, f64)> = Vec::with_capacity(m);
        for (coeffs, rel, rhs) in &lp.constraints {
            assert_eq!(coeffs.len(), n, "constraint arity mismatch");
            if *rhs < 0.0 {
                let flipped = match rel {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                rows_spec.push((coeffs.iter().map(|c| -c).collect(), flipped, -rhs));
            } else {
                rows_spec.push((coeffs.clone(), *rel, *rhs));
            }
        }
        let n_slack = rows_spec
            .iter()
            .filter(|(_, rel, _)| *rel != Relation::Eq)
            .count();
        let n_artificial = rows_spec
            .iter()
            .filter(|(_, rel, _)| *rel != Relation::Le)
            .count();
        let ncols = n + n_slack + n_artificial;

        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut slack_at = n;
        let mut art_at = n + n_slack;
        for (coeffs, rel, rhs) in rows_spec {
            let mut row = vec![0.0; ncols + 1];
            row[..n].copy_from_slice(&coeffs);
            row[ncols] = rhs;
            match rel {
                Relation::Le => {
                    row[slack_at] = 1.0;
                    basis.push(slack_at);
                    slack_at += 1;
                }
                Relation::Ge => {
                    row[slack_at] = -1.0;
                    slack_at += 1;
                    row[art_at] = 1.0;
                    basis.push(art_at);
                    art_at += 1;
                }
                Relation::Eq => {
                    row[art_at] = 1.0;
                    basis.push(art_at);
                    art_at += 1;
                }
            }
            rows.push(row);
        }
        let max_iterations = 50_000 + 200 * (m + ncols);
        Ok(Tableau {
            rows,
            basis,
            n_structural: n,
            artificial_start: n + n_slack,
            ncols,
            iterations: 0,
            max_iterations,
        })
    }

    /// Reduced costs `c_j - z_j` and current objective for cost vector `c`
    /// (indexed over all tableau columns).
    fn reduced_costs(&self, cost: &[f64]) -> (Vec<f64>, f64) {
        let mut reduced = cost.to_vec();
        let mut objective = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                objective += cb * row[self.ncols];
                for j in 0..self.ncols {
                    reduced[j] -= cb * row[j];
                }
            }
        }
        (reduced, objective)
    }

    fn pivot(&mut self, row: usize, col: usize, reduced: &mut [f64]) {
        let pivot_val = self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v /= pivot_val;
        }
        let pivot_row = self.rows[row].clone();
        for (i, other) in self.rows.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let factor = other[col];
            if factor != 0.0 {
                for (v, pv) in other.iter_mut().zip(&pivot_row) {
                    *v -= factor * pv;
                }
            }
        }
        let factor = reduced[col];
        if factor != 0.0 {
            for (r, pv) in reduced.iter_mut().zip(&pivot_row[..self.ncols]) {
                *r -= factor * pv;
            }
        }
        self.basis[row] = col;
    }

    /// Run Bland-rule iterations until optimal; `allow` filters columns that
    /// may enter the basis.
    fn optimize(
        &mut self,
        reduced: &mut Vec<f64>,
        allow: impl Fn(usize) -> bool,
    ) -> Result<(), LpFailure> {
        loop {
            // Entering: smallest-index column with negative reduced cost.
            let entering = (0..self.ncols)
                .find(|&j| allow(j) && reduced[j] < -COST_TOL);
            let Some(col) = entering else {
                return Ok(());
            };
            // Leaving: min ratio; ties broken by smallest basic variable
            // index (Bland).
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if row[col] > PIVOT_TOL {
                    let ratio = row[self.ncols] / row[col];
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((best_i, best)) => {
                            if ratio < best - PIVOT_TOL
                                || ((ratio - best).abs() <= PIVOT_TOL
                                    && self.basis[i] < self.basis[best_i])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((row, _)) = leave else {
                return Err(LpFailure::Unbounded);
            };
            self.pivot(row, col, reduced);
            self.iterations += 1;
            if self.iterations > self.max_iterations {
                return Err(LpFailure::IterationLimit);
            }
        }
    }
}

/// Solve the LP; returns the optimal point over the structural variables.
pub fn solve(lp: &Lp) -> Result<LpSolution, LpFailure> {
    let mut t = Tableau::build(lp)?;
    let has_artificials = t.artificial_start < t.ncols;

    if has_artificials {
        // Phase 1: minimize the sum of artificial variables.
        let mut cost = vec![0.0; t.ncols];
        for c in cost[t.artificial_start..].iter_mut() {
            *c = 1.0;
        }
        let (mut reduced, _) = t.reduced_costs(&cost);
        // Artificials start basic; they may not re-enter once they leave.
        let art_start = t.artificial_start;
        t.optimize(&mut reduced, |j| j < art_start)?;
        let infeasibility: f64 = t
            .basis
            .iter()
            .zip(&t.rows)
            .filter(|(b, _)| **b >= art_start)
            .map(|(_, row)| row[t.ncols])
            .sum();
        if infeasibility > 1e-7 {
            return Err(LpFailure::Infeasible);
        }
        // Drive remaining artificials out of the basis; a row with no
        // eligible pivot is redundant and gets dropped.
        let mut i = 0;
        while i < t.rows.len() {
            if t.basis[i] >= art_start {
                let col = (0..art_start).find(|&j| t.rows[i][j].abs() > PIVOT_TOL);
                match col {
                    Some(col) => {
                        let mut reduced = vec![0.0; t.ncols];
                        t.pivot(i, col, &mut reduced);
                        i += 1;
                    }
                    None => {
                        t.rows.remove(i);
                        t.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }

    // Phase 2 on the original objective.
    let mut cost = vec![0.0; t.ncols];
    cost[..t.n_structural].copy_from_slice(&lp.objective);
    let (mut reduced, _) = t.reduced_costs(&cost);
    let art_start = t.artificial_start;
    t.optimize(&mut reduced, |j| j < art_start)?;

    let mut x = vec![0.0; t.n_structural];
    for (i, &b) in t.basis.iter().enumerate() {
        if b < t.n_structural {
            x[b] = t.rows[i][t.ncols];
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, xi)| c * xi).sum();
    Ok(LpSolution {
        x,
        objective,
        iterations: t.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn textbook_maximization_via_negated_costs() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  => (2, 6), 36.
        let lp = Lp {
            objective: vec![-3.0, -5.0],
            constraints: vec![
                (vec![1.0, 0.0], Relation::Le, 4.0),
                (vec![0.0, 2.0], Relation::Le, 12.0),
                (vec![3.0, 2.0], Relation::Le, 18.0),
            ],
        };
        let sol = solve(&lp).unwrap();
        assert_abs_diff_eq!(sol.objective, -36.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[1], 6.0, epsilon = 1e-9);
    }

    #[test]
    fn equality_and_ge_rows_need_phase_one() {
        // min 2x + 3y s.t. x + y = 4, x >= 1  => (4, 0) is wrong: check.
        // Feasible: x + y = 4, x >= 1; min at y = 0? cost 2x cheaper than 3y,
        // so x = 4, y = 0, objective 8.
        let lp = Lp {
            objective: vec![2.0, 3.0],
            constraints: vec![
                (vec![1.0, 1.0], Relation::Eq, 4.0),
                (vec![1.0, 0.0], Relation::Ge, 1.0),
            ],
        };
        let sol = solve(&lp).unwrap();
        assert_abs_diff_eq!(sol.objective, 8.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[0], 4.0, epsilon = 1e-9);
    }

    #[test]
    fn negative_rhs_rows_are_normalized() {
        // -x <= -2 is x >= 2.
        let lp = Lp {
            objective: vec![1.0],
            constraints: vec![(vec![-1.0], Relation::Le, -2.0)],
        };
        let sol = solve(&lp).unwrap();
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn detects_infeasibility() {
        let lp = Lp {
            objective: vec![1.0],
            constraints: vec![
                (vec![1.0], Relation::Le, 1.0),
                (vec![1.0], Relation::Ge, 2.0),
            ],
        };
        assert_eq!(solve(&lp).unwrap_err(), LpFailure::Infeasible);
    }

    #[test]
    fn detects_unboundedness() {
        let lp = Lp {
            objective: vec![-1.0, 0.0],
            constraints: vec![(vec![0.0, 1.0], Relation::Le, 1.0)],
        };
        assert_eq!(solve(&lp).unwrap_err(), LpFailure::Unbounded);
    }

    #[test]
    fn beale_cycling_example_terminates() {
        // Degenerate problem that cycles under Dantzig's rule; Bland's rule
        // must reach the optimum -0.05 at x = (1/25, 0, 1, 0).
        let lp = Lp {
            objective: vec![-0.75, 150.0, -0.02, 6.0],
            constraints: vec![
                (vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0),
                (vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0),
                (vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0),
            ],
        };
        let sol = solve(&lp).unwrap();
        assert_abs_diff_eq!(sol.objective, -0.05, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[0], 0.04, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[2], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn redundant_equalities_are_dropped() {
        // Duplicate equality rows leave an artificial basic at zero.
        let lp = Lp {
            objective: vec![1.0, 1.0],
            constraints: vec![
                (vec![1.0, 1.0], Relation::Eq, 2.0),
                (vec![2.0, 2.0], Relation::Eq, 4.0),
            ],
        };
        let sol = solve(&lp).unwrap();
        assert_abs_diff_eq!(sol.objective, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_constraint_problem_is_trivially_zero() {
        let lp = Lp {
            objective: vec![2.0, 1.0],
            constraints: vec![],
        };
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.x, vec![0.0, 0.0]);
        assert_eq!(sol.objective, 0.0);
    }
}
