//! Dense two-phase primal simplex with Bland's anti-cycling rule.
//!
//! Solves `min c^T x  s.t.  A x <= b, x >= 0`. Sized for the CLIME
//! subproblems: a few hundred variables and constraints, dense tableau.

use nalgebra::DMatrix;

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum LpError {
    Infeasible { residual: f64 },
    Unbounded,
    IterationLimit { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone)]
pub struct LpResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

struct Tableau {
    /// m x (total + 1) rows; last column is the RHS.
    rows: Vec<Vec<f64>>,
    /// reduced-cost row, last entry is minus the current objective
    obj: Vec<f64>,
    basis: Vec<usize>,
    n_cols: usize,
    iterations: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.rows[row][col];
        let inv = 1.0 / piv;
        for v in self.rows[row].iter_mut() {
            *v *= inv;
        }
        let pivot_row = self.rows[row].clone();
        for (r, tr) in self.rows.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let f = tr[col];
            if f != 0.0 {
                for (v, p) in tr.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * p;
                }
                tr[col] = 0.0;
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for (v, p) in self.obj.iter_mut().zip(pivot_row.iter()) {
                *v -= f * p;
            }
            self.obj[col] = 0.0;
        }
        self.basis[row] = col;
        self.iterations += 1;
    }

    /// Runs simplex iterations until optimal. `allowed` marks columns that may
    /// enter the basis.
    fn optimize(&mut self, allowed: &[bool], max_iter: usize) -> Result<(), LpError> {
        loop {
            if self.iterations > max_iter {
                return Err(LpError::IterationLimit {
                    iterations: self.iterations,
                    residual: -self.obj[self.n_cols],
                });
            }
            // Bland: entering column is the smallest index with negative
            // reduced cost.
            let entering = (0..self.n_cols)
                .find(|&j| allowed[j] && self.obj[j] < -TOL);
            let Some(col) = entering else {
                return Ok(());
            };
            // ratio test, ties broken by smallest basic variable index
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][col];
                if a > TOL {
                    let ratio = self.rows[r][self.n_cols] / a;
                    match best {
                        None => best = Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - TOL
                                || (ratio < bratio + TOL && self.basis[r] < self.basis[br])
                            {
                                best = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((row, _)) = best else {
                return Err(LpError::Unbounded);
            };
            self.pivot(row, col);
        }
    }
}

/// Solves `min c^T x` subject to `A x <= b`, `x >= 0`.
pub fn solve_lp(
    c: &[f64],
    a: &DMatrix<f64>,
    b: &[f64],
    max_iter: usize,
) -> Result<LpResult, LpError> {
    let m = a.nrows();
    let n = a.ncols();
    assert_eq!(c.len(), n);
    assert_eq!(b.len(), m);

    let n_art: usize = b.iter().filter(|&&bi| bi < 0.0).count();
    let n_cols = n + m + n_art;

    let mut rows = vec![vec![0.0; n_cols + 1]; m];
    let mut basis = vec![0usize; m];
    let mut art_idx = 0usize;
    let mut artificial_cols = Vec::with_capacity(n_art);
    for i in 0..m {
        let neg = b[i] < 0.0;
        let s = if neg { -1.0 } else { 1.0 };
        for j in 0..n {
            rows[i][j] = s * a[(i, j)];
        }
        rows[i][n + i] = s; // slack
        rows[i][n_cols] = s * b[i];
        if neg {
            let col = n + m + art_idx;
            rows[i][col] = 1.0;
            basis[i] = col;
            artificial_cols.push(col);
            art_idx += 1;
        } else {
            basis[i] = n + i;
        }
    }

    let mut t = Tableau {
        rows,
        obj: vec![0.0; n_cols + 1],
        basis,
        n_cols,
        iterations: 0,
    };

    if n_art > 0 {
        // phase 1: minimize the sum of artificials
        for &col in &artificial_cols {
            t.obj[col] = 1.0;
        }
        for i in 0..m {
            if t.basis[i] >= n + m {
                let row = t.rows[i].clone();
                for (v, p) in t.obj.iter_mut().zip(row.iter()) {
                    *v -= p;
                }
            }
        }
        let allowed = vec![true; n_cols];
        t.optimize(&allowed, max_iter)?;
        let infeas = -t.obj[n_cols];
        if infeas > 1e-7 {
            return Err(LpError::Infeasible { residual: infeas });
        }
        // drive any degenerate artificial out of the basis where possible
        for i in 0..m {
            if t.basis[i] >= n + m {
                if let Some(j) = (0..n + m).find(|&j| t.rows[i][j].abs() > TOL) {
                    t.pivot(i, j);
                }
            }
        }
    }

    // phase 2
    t.obj = vec![0.0; n_cols + 1];
    t.obj[..n].copy_from_slice(c);
    for i in 0..m {
        let bj = t.basis[i];
        let cost = if bj < n { c[bj] } else { 0.0 };
        if cost != 0.0 {
            let row = t.rows[i].clone();
            for (v, p) in t.obj.iter_mut().zip(row.iter()) {
                *v -= cost * p;
            }
        }
    }
    let mut allowed = vec![true; n_cols];
    for &col in &artificial_cols {
        allowed[col] = false;
    }
    t.optimize(&allowed, max_iter)?;

    let mut x = vec![0.0; n];
    for i in 0..m {
        if t.basis[i] < n {
            x[t.basis[i]] = t.rows[i][n_cols];
        }
    }
    let objective = x.iter().zip(c.iter()).map(|(xi, ci)| xi * ci).sum();
    Ok(LpResult { x, objective, iterations: t.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn simple_feasible_lp() {
        // min -x1 - 2 x2  s.t. x1 + x2 <= 4, x2 <= 2
        let c = [-1.0, -2.0];
        let a = mat(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let b = [4.0, 2.0];
        let r = solve_lp(&c, &a, &b, 1000).unwrap();
        assert!((r.objective + 6.0).abs() < 1e-9);
        assert!((r.x[0] - 2.0).abs() < 1e-9);
        assert!((r.x[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_needs_phase_one() {
        // min x1 + x2  s.t. -x1 <= -3 (i.e. x1 >= 3)
        let c = [1.0, 1.0];
        let a = mat(1, 2, &[-1.0, 0.0]);
        let b = [-3.0];
        let r = solve_lp(&c, &a, &b, 1000).unwrap();
        assert!((r.objective - 3.0).abs() < 1e-9);
        assert!((r.x[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_lp_detected() {
        // x1 <= 1 and x1 >= 2
        let c = [1.0];
        let a = mat(2, 1, &[1.0, -1.0]);
        let b = [1.0, -2.0];
        assert!(matches!(
            solve_lp(&c, &a, &b, 1000),
            Err(LpError::Infeasible { .. })
        ));
    }

    #[test]
    fn unbounded_lp_detected() {
        let c = [-1.0];
        let a = mat(1, 1, &[0.0]);
        let b = [1.0];
        assert!(matches!(solve_lp(&c, &a, &b, 1000), Err(LpError::Unbounded)));
    }

    #[test]
    fn equality_via_paired_inequalities() {
        // 2 x1 = 1 encoded as 2x1 <= 1 and -2x1 <= -1; min x1
        let c = [1.0];
        let a = mat(2, 1, &[2.0, -2.0]);
        let b = [1.0, -1.0];
        let r = solve_lp(&c, &a, &b, 1000).unwrap();
        assert!((r.x[0] - 0.5).abs() < 1e-9);
    }
}
