//! Dense two-phase tableau simplex for small models.
//!
//! Bland's rule everywhere, so termination is guaranteed at the cost of
//! speed. The solver is size gated: models beyond [`SIMPLEX_CELL_CAP`]
//! tableau cells are rejected and must go through the MPS bridge instead.

use crate::{Error, Result};

/// Maximum number of tableau cells (rows x columns after standardization).
pub const SIMPLEX_CELL_CAP: u64 = 50_000_000;

const EPS: f64 = 1e-9;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Rel {
    Le,
    Ge,
    Eq,
}

/// A sparse row `sum coeffs . x  rel  rhs`.
#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub rel: Rel,
    pub rhs: f64,
}

/// Minimization LP over box-bounded variables.
#[derive(Clone, Debug, Default)]
pub struct Lp {
    /// Objective coefficients, one per variable (minimized).
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    /// Per-variable `(lower, upper)`; use `f64::NEG_INFINITY` /
    /// `f64::INFINITY` for absent bounds.
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

/// Largest bound or constraint violation of `x`, and the objective value.
#[derive(Clone, Copy, Debug)]
pub struct VerifyReport {
    pub max_violation: f64,
    pub objective: f64,
}

pub fn verify_solution(lp: &Lp, x: &[f64]) -> Result<VerifyReport> {
    if x.len() != lp.objective.len() {
        return Err(Error::Solver(format!(
            "solution has {} entries, model has {} variables",
            x.len(),
            lp.objective.len()
        )));
    }
    let mut worst: f64 = 0.0;
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        worst = worst.max(lo - x[j]).max(x[j] - hi);
    }
    for con in &lp.constraints {
        let lhs: f64 = con.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
        let gap = match con.rel {
            Rel::Le => lhs - con.rhs,
            Rel::Ge => con.rhs - lhs,
            Rel::Eq => (lhs - con.rhs).abs(),
        };
        worst = worst.max(gap);
    }
    let objective = lp.objective.iter().zip(x).map(|(c, v)| c * v).sum();
    Ok(VerifyReport { max_violation: worst, objective })
}

/// One standardized column: `x_orig = shift + sign * y` with `y >= 0`.
struct Col {
    var: usize,
    shift: f64,
    sign: f64,
}

pub fn solve(lp: &Lp) -> Result<LpOutcome> {
    let nvars = lp.objective.len();
    if lp.bounds.len() != nvars {
        return Err(Error::Solver("bounds length mismatch".into()));
    }

    // standardize variables to y >= 0
    let mut cols: Vec<Col> = Vec::new();
    let mut cols_of: Vec<Vec<usize>> = vec![Vec::new(); nvars];
    let mut upper_rows: Vec<(usize, f64)> = Vec::new(); // (col, range) for finite two-sided bounds
    for (var, &(lo, hi)) in lp.bounds.iter().enumerate() {
        if lo > hi + EPS {
            return Ok(LpOutcome::Infeasible);
        }
        if lo.is_finite() {
            let c = cols.len();
            cols.push(Col { var, shift: lo, sign: 1.0 });
            cols_of[var].push(c);
            if hi.is_finite() {
                upper_rows.push((c, hi - lo));
            }
        } else if hi.is_finite() {
            let c = cols.len();
            cols.push(Col { var, shift: hi, sign: -1.0 });
            cols_of[var].push(c);
        } else {
            // free variable: x = y+ - y-
            let c = cols.len();
            cols.push(Col { var, shift: 0.0, sign: 1.0 });
            cols.push(Col { var, shift: 0.0, sign: -1.0 });
            cols_of[var].push(c);
            cols_of[var].push(c + 1);
        }
    }

    let nrows = lp.constraints.len() + upper_rows.len();
    let nslack = lp
        .constraints
        .iter()
        .filter(|c| c.rel != Rel::Eq)
        .count()
        + upper_rows.len();
    let nstruct = cols.len() + nslack;
    let total = nstruct + nrows; // artificials appended per row
    let cells = (nrows as u64 + 1) * (total as u64 + 1);
    if cells > SIMPLEX_CELL_CAP {
        return Err(Error::SizeGate(format!(
            "simplex tableau needs {cells} cells, cap is {SIMPLEX_CELL_CAP}"
        )));
    }

    let width = total + 1; // + rhs
    let mut a = vec![0.0f64; nrows * width];
    let mut slack_at = cols.len();
    {
        let mut row = 0usize;
        let put = |a: &mut Vec<f64>, row: usize, col: usize, v: f64| {
            a[row * width + col] += v;
        };
        for con in &lp.constraints {
            let mut rhs = con.rhs;
            for &(var, coef) in &con.coeffs {
                if var >= nvars {
                    return Err(Error::Solver(format!("constraint references var {var}")));
                }
                // split columns of a free variable both carry zero shift
                for &c in &cols_of[var] {
                    put(&mut a, row, c, coef * cols[c].sign);
                    rhs -= coef * cols[c].shift;
                }
            }
            match con.rel {
                Rel::Le => {
                    put(&mut a, row, slack_at, 1.0);
                    slack_at += 1;
                }
                Rel::Ge => {
                    put(&mut a, row, slack_at, -1.0);
                    slack_at += 1;
                }
                Rel::Eq => {}
            }
            a[row * width + total] = rhs;
            row += 1;
        }
        for &(c, range) in &upper_rows {
            put(&mut a, row, c, 1.0);
            put(&mut a, row, slack_at, 1.0);
            slack_at += 1;
            a[row * width + total] = range;
            row += 1;
        }
        debug_assert_eq!(row, nrows);
        debug_assert_eq!(slack_at, nstruct);
    }

    // make rhs nonnegative, then install artificial basis
    let mut basis = Vec::with_capacity(nrows);
    for row in 0..nrows {
        if a[row * width + total] < 0.0 {
            for col in 0..width {
                a[row * width + col] = -a[row * width + col];
            }
        }
        let art = nstruct + row;
        a[row * width + art] = 1.0;
        basis.push(art);
    }

    // phase 1: minimize sum of artificials
    let mut obj = vec![0.0f64; width];
    for art in nstruct..total {
        obj[art] = 1.0;
    }
    for row in 0..nrows {
        // reduce basic (artificial) columns out of the objective row
        for col in 0..width {
            obj[col] -= a[row * width + col];
        }
    }
    run_simplex(&mut a, &mut obj, &mut basis, nrows, width, total)?;
    let phase1 = -obj[total];
    if phase1 > 1e-7 {
        return Ok(LpOutcome::Infeasible);
    }
    // drive any residual artificials out of the basis
    for row in 0..nrows {
        if basis[row] >= nstruct {
            let pivot_col = (0..nstruct).find(|&c| a[row * width + c].abs() > EPS);
            if let Some(col) = pivot_col {
                pivot(&mut a, &mut obj, row, col, nrows, width);
                basis[row] = col;
            }
            // else the row is redundant; the artificial stays basic at zero
        }
    }

    // phase 2: real objective over structural columns, artificials frozen
    let mut obj2 = vec![0.0f64; width];
    for (c, col) in cols.iter().enumerate() {
        obj2[c] = lp.objective[col.var] * col.sign;
    }
    for row in 0..nrows {
        let b = basis[row];
        let c = obj2[b];
        if c != 0.0 {
            for col in 0..width {
                obj2[col] -= c * a[row * width + col];
            }
        }
    }
    let bounded = run_simplex(&mut a, &mut obj2, &mut basis, nrows, width, nstruct)?;
    if !bounded {
        return Ok(LpOutcome::Unbounded);
    }

    let mut y = vec![0.0f64; total];
    for row in 0..nrows {
        y[basis[row]] = a[row * width + total];
    }
    let mut x = vec![0.0f64; nvars];
    for (var, &(lo, hi)) in lp.bounds.iter().enumerate() {
        x[var] = if lo.is_finite() {
            lo
        } else if hi.is_finite() {
            hi
        } else {
            0.0
        };
    }
    for (c, col) in cols.iter().enumerate() {
        x[col.var] += col.sign * y[c];
    }
    let value: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpOutcome::Optimal { x, value })
}

/// Bland's rule simplex on the tableau. Columns `>= eligible` are frozen.
/// Returns false when the objective is unbounded below.
fn run_simplex(
    a: &mut [f64],
    obj: &mut [f64],
    basis: &mut [usize],
    nrows: usize,
    width: usize,
    eligible: usize,
) -> Result<bool> {
    let rhs = width - 1;
    loop {
        // Bland: smallest-index column with negative reduced cost
        let Some(enter) = (0..eligible).find(|&c| obj[c] < -EPS) else {
            return Ok(true);
        };
        let mut leave: Option<(usize, f64)> = None;
        for row in 0..nrows {
            let coef = a[row * width + enter];
            if coef > EPS {
                let ratio = a[row * width + rhs] / coef;
                let better = match leave {
                    None => true,
                    // Bland tie-break: smallest basic variable index
                    Some((best_row, best)) => {
                        ratio < best - EPS
                            || (ratio < best + EPS && basis[row] < basis[best_row])
                    }
                };
                if better {
                    leave = Some((row, ratio));
                }
            }
        }
        let Some((row, _)) = leave else {
            return Ok(false);
        };
        pivot(a, obj, row, enter, nrows, width);
        basis[row] = enter;
    }
}

fn pivot(a: &mut [f64], obj: &mut [f64], prow: usize, pcol: usize, nrows: usize, width: usize) {
    let p = a[prow * width + pcol];
    debug_assert!(p.abs() > EPS);
    for col in 0..width {
        a[prow * width + col] /= p;
    }
    a[prow * width + pcol] = 1.0;
    for row in 0..nrows {
        if row == prow {
            continue;
        }
        let f = a[row * width + pcol];
        if f != 0.0 {
            for col in 0..width {
                a[row * width + col] -= f * a[prow * width + col];
            }
            a[row * width + pcol] = 0.0;
        }
    }
    let f = obj[pcol];
    if f != 0.0 {
        for col in 0..width {
            obj[col] -= f * a[prow * width + col];
        }
        obj[pcol] = 0.0;
    }
}
