//! Dense two-phase simplex for small standard-form programs.
//!
//! Solves `min cᵀx` subject to `Ax = b`, `x ≥ 0` and returns the optimal
//! duals `y` with `Aᵀy ≤ c`. Bland's rule keeps degenerate problems from
//! cycling.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex did not converge within {0} pivots")]
    IterationLimit(usize),
    #[error("inconsistent dimensions: A is {rows}x{cols}, b has {b}, c has {c}")]
    Dimension {
        rows: usize,
        cols: usize,
        b: usize,
        c: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Row duals; `cᵀx = bᵀy` at the optimum.
    pub duals: DVector<f64>,
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;

struct Tableau {
    /// `rows × (cols + 1)`; the last column is the right-hand side.
    t: DMatrix<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let width = self.t.ncols();
        let p = self.t[(row, col)];
        for j in 0..width {
            self.t[(row, j)] /= p;
        }
        for r in 0..self.t.nrows() {
            if r == row {
                continue;
            }
            let f = self.t[(r, col)];
            if f != 0.0 {
                for j in 0..width {
                    let v = self.t[(row, j)];
                    self.t[(r, j)] -= f * v;
                }
                self.t[(r, col)] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// Minimize `cost` over the columns `< allowed`, starting from the
    /// current basis. Bland's rule for both entering and leaving choices.
    fn optimize(&mut self, cost: &[f64], allowed: usize, limit: usize) -> Result<(), LpError> {
        let m = self.t.nrows();
        let rhs = self.t.ncols() - 1;
        for _ in 0..limit {
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let mut red = cost[j];
                for r in 0..m {
                    red -= cost[self.basis[r]] * self.t[(r, j)];
                }
                red < -COST_TOL
            });
            let Some(col) = entering else {
                return Ok(());
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for r in 0..m {
                let a = self.t[(r, col)];
                if a > PIVOT_TOL {
                    let ratio = self.t[(r, rhs)] / a;
                    let better = match best {
                        None => true,
                        Some((br, _, bvar)) => {
                            ratio < br - 1e-14 * br.abs().max(1.0)
                                || (ratio <= br + 1e-14 * br.abs().max(1.0) && self.basis[r] < bvar)
                        }
                    };
                    if better {
                        best = Some((ratio, r, self.basis[r]));
                    }
                }
            }
            match best {
                Some((_, row, _)) => self.pivot(row, col),
                None => return Err(LpError::Unbounded),
            }
        }
        Err(LpError::IterationLimit(limit))
    }
}

/// Solve `min cᵀx, Ax = b, x ≥ 0`.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Result<LpSolution, LpError> {
    let (m, n) = a.shape();
    if b.len() != m || c.len() != n {
        return Err(LpError::Dimension {
            rows: m,
            cols: n,
            b: b.len(),
            c: c.len(),
        });
    }
    let limit = 50 * (m + n) + 1000;
    // Phase 1 on [A | I] with rows flipped so that b ≥ 0.
    let sign: Vec<f64> = (0..m)
        .map(|r| if b[r] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let mut t = DMatrix::zeros(m, n + m + 1);
    for r in 0..m {
        for j in 0..n {
            t[(r, j)] = sign[r] * a[(r, j)];
        }
        t[(r, n + r)] = 1.0;
        t[(r, n + m)] = sign[r] * b[r];
    }
    let mut tab = Tableau {
        t,
        basis: (n..n + m).collect(),
    };
    let mut phase1 = vec![0.0; n + m];
    for v in &mut phase1[n..] {
        *v = 1.0;
    }
    tab.optimize(&phase1, n + m, limit)?;
    let infeasibility: f64 = (0..m)
        .filter(|&r| tab.basis[r] >= n)
        .map(|r| tab.t[(r, n + m)])
        .sum();
    let scale = 1.0 + b.amax();
    if infeasibility > 1e-9 * scale {
        return Err(LpError::Infeasible);
    }
    // Drive zero-level artificials out; rows with no usable pivot are redundant.
    let mut redundant = vec![false; m];
    for r in 0..m {
        if tab.basis[r] >= n {
            match (0..n).find(|&j| tab.t[(r, j)].abs() > 1e-9 && !tab.basis.contains(&j)) {
                Some(j) => tab.pivot(r, j),
                None => redundant[r] = true,
            }
        }
    }
    let mut phase2 = vec![0.0; n + m];
    phase2[..n].copy_from_slice(c.as_slice());
    // Artificials of redundant rows stay basic at zero and never re-enter.
    tab.optimize(&phase2, n, limit)?;

    let mut x = DVector::zeros(n);
    for r in 0..m {
        let j = tab.basis[r];
        if j < n {
            x[j] = tab.t[(r, n + m)].max(0.0);
        }
    }
    let duals = duals(a, c, &tab.basis, &redundant, n)?;
    Ok(LpSolution {
        objective: c.dot(&x),
        x,
        duals,
    })
}

/// `y = B⁻ᵀ c_B` over the non-redundant rows, zero on redundant ones.
fn duals(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    basis: &[usize],
    redundant: &[bool],
    n: usize,
) -> Result<DVector<f64>, LpError> {
    let m = a.nrows();
    let rows: Vec<usize> = (0..m).filter(|&r| !redundant[r]).collect();
    let cols: Vec<usize> = rows.iter().map(|&r| basis[r]).collect();
    let k = rows.len();
    let mut bt = DMatrix::zeros(k, k);
    let mut cb = DVector::zeros(k);
    for (i, &col) in cols.iter().enumerate() {
        for (j, &row) in rows.iter().enumerate() {
            // Bᵀ[i][j] = B[j][i] = A[row_j][col_i]
            bt[(i, j)] = if col < n {
                a[(row, col)]
            } else if col - n == row {
                1.0
            } else {
                0.0
            };
        }
        cb[i] = if col < n { c[col] } else { 0.0 };
    }
    let y_small = bt.lu().solve(&cb).ok_or(LpError::Infeasible)?;
    let mut y = DVector::zeros(m);
    for (j, &row) in rows.iter().enumerate() {
        y[row] = y_small[j];
    }
    Ok(y)
}
