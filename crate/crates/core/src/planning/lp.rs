//! Dense two-phase simplex with Bland's rule.
//!
//! Solves `min c^T x` subject to `A x >= b` with `x` free. Planning LPs
//! have a handful of variables and dozens of rows, so the dual
//! `max b^T y, A^T y = c, y >= 0` is solved first: its tableau has one row
//! per variable. The primal standard form `x = x+ - x-`,
//! `A x+ - A x- - s = b` is the fallback.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_FLOOR: f64 = 1e-12;
const EPS: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone)]
pub struct LinearProgram {
    /// `m x n` constraint rows.
    pub rows: DMatrix<f64>,
    /// `m` right-hand sides.
    pub offsets: DVector<f64>,
    /// `n` cost coefficients.
    pub objective: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub outcome: LpOutcome,
    pub pivots: usize,
}

impl LpSolution {
    pub fn optimal(&self) -> Option<(&DVector<f64>, f64)> {
        match &self.outcome {
            LpOutcome::Optimal { x, objective } => Some((x, *objective)),
            _ => None,
        }
    }
}

pub fn lp_solve(lp: &LinearProgram) -> Result<LpSolution> {
    let (m, n) = lp.rows.shape();
    if lp.offsets.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: lp.offsets.len() });
    }
    if lp.objective.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: lp.objective.len() });
    }
    if lp.rows.iter().chain(lp.offsets.iter()).chain(lp.objective.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("linear program data is not finite".into()));
    }
    if m == 0 {
        return Ok(LpSolution {
            outcome: if lp.objective.amax() > 0.0 {
                LpOutcome::Unbounded
            } else {
                LpOutcome::Optimal { x: DVector::zeros(n), objective: 0.0 }
            },
            pivots: 0,
        });
    }
    if let Some(solution) = solve_through_dual(lp)? {
        return Ok(solution);
    }
    solve_primal(lp)
}

/// Solves the dual `max b^T y, A^T y = c, y >= 0`, whose tableau has one
/// row per variable instead of one per constraint. The primal point is the
/// negated simplex multiplier vector of `min -b^T y`. Returns `None` when the recovered point
/// fails verification (degenerate or rank-deficient cases), leaving those to
/// the primal tableau.
fn solve_through_dual(lp: &LinearProgram) -> Result<Option<LpSolution>> {
    let (m, n) = lp.rows.shape();
    let at = lp.rows.transpose();
    let cost: Vec<f64> = lp.offsets.iter().map(|b| -b).collect();
    let dual = Tableau::new(&at, lp.objective.as_slice()).solve(&cost)?;
    let mut pivots = dual.pivots;
    let outcome = match dual.outcome {
        StandardOutcome::Optimal { multipliers, .. } => {
            // the multipliers satisfy `A pi <= -b`
            let x = -DVector::from_vec(multipliers);
            let scale = 1.0 + lp.offsets.amax() + lp.rows.amax() * x.amax();
            let violation = (0..m).map(|i| lp.offsets[i] - lp.rows.row(i).transpose().dot(&x)).fold(0.0, f64::max);
            if violation > 1e-9 * scale {
                return Ok(None);
            }
            let objective = lp.objective.dot(&x);
            LpOutcome::Optimal { x, objective }
        }
        // an unbounded dual certifies an empty primal
        StandardOutcome::Unbounded => LpOutcome::Infeasible,
        StandardOutcome::Infeasible => {
            // the primal is unbounded if feasible: check with a zero objective
            let check = Tableau::new(&at, &vec![0.0; n]).solve(&cost)?;
            pivots += check.pivots;
            match check.outcome {
                StandardOutcome::Unbounded => LpOutcome::Infeasible,
                _ => LpOutcome::Unbounded,
            }
        }
    };
    Ok(Some(LpSolution { outcome, pivots }))
}

/// Primal form: `x = x+ - x-`, `A x+ - A x- - s = b`.
fn solve_primal(lp: &LinearProgram) -> Result<LpSolution> {
    let (m, n) = lp.rows.shape();
    let mut e = DMatrix::zeros(m, 2 * n + m);
    e.view_mut((0, 0), (m, n)).copy_from(&lp.rows);
    e.view_mut((0, n), (m, n)).copy_from(&(-&lp.rows));
    e.view_mut((0, 2 * n), (m, m)).copy_from(&(-DMatrix::identity(m, m)));
    let mut cost = vec![0.0; 2 * n + m];
    for j in 0..n {
        cost[j] = lp.objective[j];
        cost[n + j] = -lp.objective[j];
    }
    let result = Tableau::new(&e, lp.offsets.as_slice()).solve(&cost)?;
    let outcome = match result.outcome {
        StandardOutcome::Optimal { y, .. } => {
            let x = DVector::from_fn(n, |j, _| y[j] - y[n + j]);
            let objective = lp.objective.dot(&x);
            LpOutcome::Optimal { x, objective }
        }
        StandardOutcome::Infeasible => LpOutcome::Infeasible,
        StandardOutcome::Unbounded => LpOutcome::Unbounded,
    };
    Ok(LpSolution { outcome, pivots: result.pivots })
}

enum StandardOutcome {
    /// `y` solves the problem; `multipliers` are the equality-row prices.
    Optimal { y: Vec<f64>, multipliers: Vec<f64> },
    Infeasible,
    Unbounded,
}

struct StandardResult {
    outcome: StandardOutcome,
    pivots: usize,
}

/// Two-phase tableau for `min d^T y` subject to `E y = r`, `y >= 0`.
struct Tableau {
    /// `(m + 1) x (cols + 1)`; the last row is the reduced-cost row, the last
    /// column the right-hand side.
    t: DMatrix<f64>,
    basis: Vec<usize>,
    m: usize,
    /// Structural columns; one artificial per row follows.
    real_cols: usize,
    /// Row scale factors applied to `E y = r`.
    row_scale: Vec<f64>,
    active_row: Vec<bool>,
    pivots: usize,
}

impl Tableau {
    fn new(e: &DMatrix<f64>, r: &[f64]) -> Self {
        let (m, real_cols) = e.shape();
        let cols = real_cols + m;
        let mut t = DMatrix::zeros(m + 1, cols + 1);
        let mut row_scale = vec![1.0; m];
        for i in 0..m {
            let row = e.row(i);
            let scale = row.amax().max(r[i].abs()).max(1e-300);
            let sign = if r[i] < 0.0 { -1.0 } else { 1.0 };
            let k = sign / scale;
            row_scale[i] = k;
            for j in 0..real_cols {
                t[(i, j)] = row[j] * k;
            }
            t[(i, real_cols + i)] = 1.0;
            t[(i, cols)] = r[i] * k;
        }
        Self {
            t,
            basis: (real_cols..cols).collect(),
            m,
            real_cols,
            row_scale,
            active_row: vec![true; m],
            pivots: 0,
        }
    }

    fn cols(&self) -> usize {
        self.t.ncols() - 1
    }

    fn set_costs(&mut self, costs: &[f64]) {
        let cols = self.cols();
        let m = self.m;
        for j in 0..=cols {
            self.t[(m, j)] = if j < cols { costs[j] } else { 0.0 };
        }
        for i in 0..m {
            if !self.active_row[i] {
                continue;
            }
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                for j in 0..=cols {
                    let v = self.t[(i, j)];
                    self.t[(m, j)] -= cb * v;
                }
            }
        }
    }

    fn pivot(&mut self, row: usize, col: usize) -> Result<()> {
        let p = self.t[(row, col)];
        if p.abs() < PIVOT_FLOOR {
            return Err(Error::Solver(format!(
                "simplex pivot {p:.3e} below {PIVOT_FLOOR:e} at row {row}, column {col} after {} pivots",
                self.pivots
            )));
        }
        self.pivots += 1;
        if self.pivots > MAX_PIVOTS {
            return Err(Error::Solver("simplex pivot limit exceeded".into()));
        }
        let cols = self.t.ncols();
        for j in 0..cols {
            self.t[(row, j)] /= p;
        }
        for i in 0..=self.m {
            if i == row {
                continue;
            }
            let factor = self.t[(i, col)];
            if factor != 0.0 {
                for j in 0..cols {
                    let v = self.t[(row, j)];
                    self.t[(i, j)] -= factor * v;
                }
            }
        }
        self.basis[row] = col;
        Ok(())
    }

    /// Runs simplex iterations over columns `< allowed_cols`. Returns false if unbounded.
    fn iterate(&mut self, allowed_cols: usize) -> Result<bool> {
        let rhs = self.cols();
        loop {
            // Bland: lowest-index improving column
            let Some(col) = (0..allowed_cols).find(|&j| self.t[(self.m, j)] < -EPS) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if !self.active_row[i] {
                    continue;
                }
                let a = self.t[(i, col)];
                if a > EPS {
                    let ratio = self.t[(i, rhs)] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            if ratio < best - EPS
                                || (ratio <= best + EPS && self.basis[i] < self.basis[r])
                            {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Ok(false);
            };
            self.pivot(row, col)?;
        }
    }

    fn solve(mut self, cost: &[f64]) -> Result<StandardResult> {
        let cols = self.cols();
        let mut phase1 = vec![0.0; cols];
        for c in phase1.iter_mut().skip(self.real_cols) {
            *c = 1.0;
        }
        self.set_costs(&phase1);
        self.iterate(cols)?;

        let infeasibility = -self.t[(self.m, cols)];
        let scale = 1.0 + (0..self.m).map(|i| self.t[(i, cols)].abs()).fold(0.0, f64::max);
        if infeasibility > 1e-9 * scale {
            return Ok(StandardResult { outcome: StandardOutcome::Infeasible, pivots: self.pivots });
        }

        // drive zero-level artificials out of the basis
        for i in 0..self.m {
            if self.basis[i] < self.real_cols {
                continue;
            }
            let col = (0..self.real_cols).find(|&j| self.t[(i, j)].abs() > EPS);
            match col {
                Some(j) => self.pivot(i, j)?,
                None => self.active_row[i] = false,
            }
        }

        let mut phase2 = vec![0.0; cols];
        phase2[..self.real_cols].copy_from_slice(cost);
        self.set_costs(&phase2);
        if !self.iterate(self.real_cols)? {
            return Ok(StandardResult { outcome: StandardOutcome::Unbounded, pivots: self.pivots });
        }

        let mut y = vec![0.0; self.real_cols];
        for i in 0..self.m {
            if self.active_row[i] && self.basis[i] < self.real_cols {
                y[self.basis[i]] = self.t[(i, cols)];
            }
        }
        // artificial column i starts as e_i with zero phase-2 cost, so its
        // reduced cost is minus the scaled row's price
        let multipliers = (0..self.m)
            .map(|i| -self.t[(self.m, self.real_cols + i)] * self.row_scale[i])
            .collect();
        Ok(StandardResult { outcome: StandardOutcome::Optimal { y, multipliers }, pivots: self.pivots })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(rows: &[&[f64]], offsets: &[f64], objective: &[f64]) -> LinearProgram {
        let n = objective.len();
        LinearProgram {
            rows: DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]),
            offsets: DVector::from_column_slice(offsets),
            objective: DVector::from_column_slice(objective),
        }
    }

    #[test]
    fn one_dimensional_bound() {
        let sol = lp_solve(&lp(&[&[1.0]], &[3.0], &[1.0])).unwrap();
        let (x, obj) = sol.optimal().unwrap();
        assert!((x[0] - 3.0).abs() < 1e-12 && (obj - 3.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible() {
        let sol = lp_solve(&lp(&[&[1.0], &[-1.0]], &[1.0, 0.0], &[0.0])).unwrap();
        assert_eq!(sol.outcome, LpOutcome::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let sol = lp_solve(&lp(&[&[1.0, 0.0]], &[0.0], &[0.0, -1.0])).unwrap();
        assert_eq!(sol.outcome, LpOutcome::Unbounded);
    }

    #[test]
    fn negative_bounds_and_free_variables() {
        // min x + y s.t. x >= -2, y >= -3, x + y >= -4
        let sol = lp_solve(&lp(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]], &[-2.0, -3.0, -4.0], &[1.0, 1.0])).unwrap();
        assert!((sol.optimal().unwrap().1 + 4.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_vertex_terminates() {
        // many constraints through the same vertex (0, 0)
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|k| {
                let a = k as f64 * 0.2;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let sol = lp_solve(&lp(&refs, &[0.0; 12], &[1.0, 1.0])).unwrap();
        let (x, _) = sol.optimal().unwrap();
        assert!(x.norm() < 1e-9);
    }

    #[test]
    fn empty_problem() {
        let sol = lp_solve(&lp(&[], &[], &[0.0, 0.0])).unwrap();
        assert!(sol.optimal().is_some());
    }
}
