//! Dense two-phase simplex for small standard-form linear programs
//! `min cᵀx  s.t.  Ax = b, x ≥ 0`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible (phase-one objective {0:e})")]
    Infeasible(f64),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached")]
    IterationLimit,
    #[error("dimension mismatch")]
    Dimension,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Columns of the final basis (original variables only).
    pub basis: Vec<usize>,
}

const PIVOT_TOL: f64 = 1e-11;

struct Tableau {
    t: DMatrix<f64>, // rows: constraints, last row: reduced costs; last column: rhs
    basis: Vec<usize>,
}

impl Tableau {
    fn rows(&self) -> usize {
        self.t.nrows() - 1
    }

    fn rhs_col(&self) -> usize {
        self.t.ncols() - 1
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[(r, c)];
        let ncols = self.t.ncols();
        for j in 0..ncols {
            self.t[(r, j)] /= p;
        }
        for i in 0..self.t.nrows() {
            if i == r {
                continue;
            }
            let f = self.t[(i, c)];
            if f != 0.0 {
                for j in 0..ncols {
                    let v = self.t[(r, j)];
                    self.t[(i, j)] -= f * v;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Runs simplex iterations over columns `0..allowed` with Bland's rule.
    fn optimize(&mut self, allowed: usize, max_iter: usize) -> Result<(), LpError> {
        let obj = self.rows();
        let rhs = self.rhs_col();
        for _ in 0..max_iter {
            let Some(c) = (0..allowed).find(|&j| self.t[(obj, j)] < -PIVOT_TOL) else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..obj {
                let a = self.t[(i, c)];
                if a > PIVOT_TOL {
                    let ratio = self.t[(i, rhs)] / a;
                    match best {
                        Some((bi, br)) if ratio > br || (ratio == br && self.basis[i] > self.basis[bi]) => {}
                        _ => best = Some((i, ratio)),
                    }
                }
            }
            let Some((r, _)) = best else {
                return Err(LpError::Unbounded);
            };
            self.pivot(r, c);
        }
        Err(LpError::IterationLimit)
    }
}

pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Result<LpSolution, LpError> {
    let (m, n) = a.shape();
    if b.len() != m || c.len() != n {
        return Err(LpError::Dimension);
    }
    // columns: n originals, m artificials, rhs
    let mut t = DMatrix::zeros(m + 1, n + m + 1);
    for i in 0..m {
        let s = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = s * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, n + m)] = s * b[i];
    }
    // phase one: minimize the sum of artificials
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..m {
            s += t[(i, j)];
        }
        t[(m, j)] = -s;
    }
    let mut s = 0.0;
    for i in 0..m {
        s += t[(i, n + m)];
    }
    t[(m, n + m)] = -s;
    let mut tab = Tableau {
        t,
        basis: (n..n + m).collect(),
    };
    let max_iter = 50 * (n + m) + 1000;
    tab.optimize(n, max_iter)?;
    let infeas = -tab.t[(m, n + m)];
    let bscale = b.amax().max(1.0);
    if infeas > 1e-10 * bscale {
        return Err(LpError::Infeasible(infeas));
    }
    // drive remaining artificials out of the basis
    let mut redundant = Vec::new();
    for r in 0..m {
        if tab.basis[r] >= n {
            if let Some(c) = (0..n).find(|&j| tab.t[(r, j)].abs() > 1e-9) {
                tab.pivot(r, c);
            } else {
                redundant.push(r);
            }
        }
    }
    // phase two objective row
    for j in 0..tab.t.ncols() {
        tab.t[(m, j)] = if j < n { c[j] } else { 0.0 };
    }
    for r in 0..m {
        let bj = tab.basis[r];
        if bj < n {
            let f = tab.t[(m, bj)];
            if f != 0.0 {
                for j in 0..tab.t.ncols() {
                    let v = tab.t[(r, j)];
                    tab.t[(m, j)] -= f * v;
                }
            }
        }
    }
    // redundant rows keep an artificial at zero; block them from entering
    for &r in &redundant {
        for j in 0..n {
            tab.t[(r, j)] = 0.0;
        }
    }
    tab.optimize(n, max_iter)?;
    let mut x = DVector::zeros(n);
    let rhs = n + m;
    let mut basis = Vec::new();
    for r in 0..m {
        let bj = tab.basis[r];
        if bj < n {
            x[bj] = tab.t[(r, rhs)].max(0.0);
            basis.push(bj);
        }
    }
    basis.sort_unstable();
    let objective = c.dot(&x);
    Ok(LpSolution { x, objective, basis })
}
