//! Dense two-phase primal simplex with shadow prices.
//!
//! Sized for desk-scale offline problems (tens of rows, a few thousand
//! columns). Pricing is Dantzig's rule, switching to Bland's rule after a run
//! of degenerate pivots so the method cannot cycle.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;
const MAX_PIVOTS: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

/// `maximize objective . x` subject to `rows`, `x >= 0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Rate of change of the optimum per unit of each row's right-hand side:
    /// `>= 0` on `Le` rows, `<= 0` on `Ge` rows.
    pub shadow_prices: Vec<f64>,
    pub pivots: usize,
}

struct Tableau {
    m: usize,
    width: usize,
    /// `m` constraint rows followed by the reduced-cost row; last column is
    /// the right-hand side.
    cells: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.cells[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.cells[r * self.width + self.width - 1]
    }

    fn cost_row(&self) -> usize {
        self.m
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let p = self.at(row, col);
        for c in 0..w {
            self.cells[row * w + c] /= p;
        }
        self.cells[row * w + col] = 1.0;
        let (before, rest) = self.cells.split_at_mut(row * w);
        let (pivot_row, after) = rest.split_at_mut(w);
        let update = |target: &mut [f64]| {
            let factor = target[col];
            if factor != 0.0 {
                for (t, &pv) in target.iter_mut().zip(pivot_row.iter()) {
                    *t -= factor * pv;
                }
                target[col] = 0.0;
            }
        };
        before.chunks_mut(w).for_each(update);
        after.chunks_mut(w).for_each(update);
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Runs simplex iterations on the current cost row. Columns for which
    /// `allowed` is false never enter. Returns false if unbounded.
    fn optimize(&mut self, allowed: &dyn Fn(usize) -> bool) -> Result<bool> {
        let n = self.width - 1;
        let cost = self.cost_row();
        let mut degenerate_run = 0usize;
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::Invalid("simplex pivot limit reached".into()));
            }
            let bland = degenerate_run >= DEGENERATE_RUN;
            let mut entering = None;
            let mut best = -COST_TOL;
            for j in 0..n {
                if !allowed(j) {
                    continue;
                }
                let d = self.at(cost, j);
                if d < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(col) = entering else {
                return Ok(true);
            };

            let mut leaving: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.at(r, col);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    let better = match leaving {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - 1e-15
                                || (ratio <= lratio + 1e-15 && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leaving = Some((r, ratio));
                    }
                }
            }
            let Some((row, ratio)) = leaving else {
                return Ok(false);
            };
            if ratio <= 1e-15 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(row, col);
        }
    }

    fn set_costs(&mut self, costs: &[f64]) {
        // reduced cost d_j = c_B B^-1 A_j - c_j, objective in the rhs cell
        let w = self.width;
        let cost = self.cost_row();
        for c in 0..w {
            let mut v = if c < costs.len() { -costs[c] } else { 0.0 };
            for r in 0..self.m {
                let cb = costs[self.basis[r]];
                if cb != 0.0 {
                    v += cb * self.at(r, c);
                }
            }
            self.cells[cost * w + c] = v;
        }
    }
}

pub fn solve(lp: &LinearProgram) -> Result<Solution> {
    let n = lp.objective.len();
    let m = lp.rows.len();

    // Normalize every row to a non-negative right-hand side.
    let mut sign = vec![1.0; m];
    let mut kinds = Vec::with_capacity(m);
    for (r, row) in lp.rows.iter().enumerate() {
        if row.coeffs.iter().any(|&(j, _)| j >= n) {
            return Err(Error::Invalid(format!(
                "row {r} references a missing column"
            )));
        }
        let mut kind = row.kind;
        if row.rhs < 0.0 {
            sign[r] = -1.0;
            kind = match kind {
                RowKind::Le => RowKind::Ge,
                RowKind::Ge => RowKind::Le,
                RowKind::Eq => RowKind::Eq,
            };
        }
        kinds.push(kind);
    }

    // Column layout: structural | one slack or surplus per inequality | artificials.
    let mut slack_col = vec![usize::MAX; m];
    let mut next = n;
    for r in 0..m {
        if kinds[r] != RowKind::Eq {
            slack_col[r] = next;
            next += 1;
        }
    }
    let first_artificial = next;
    let mut art_col = vec![usize::MAX; m];
    for r in 0..m {
        if kinds[r] != RowKind::Le {
            art_col[r] = next;
            next += 1;
        }
    }
    let total = next;
    let width = total + 1;
    let mut t = Tableau {
        m,
        width,
        cells: vec![0.0; (m + 1) * width],
        basis: vec![0; m],
        pivots: 0,
    };
    for (r, row) in lp.rows.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            t.cells[r * width + j] += sign[r] * a;
        }
        t.cells[r * width + total] = sign[r] * row.rhs;
        match kinds[r] {
            RowKind::Le => {
                t.cells[r * width + slack_col[r]] = 1.0;
                t.basis[r] = slack_col[r];
            }
            RowKind::Ge => {
                t.cells[r * width + slack_col[r]] = -1.0;
                t.cells[r * width + art_col[r]] = 1.0;
                t.basis[r] = art_col[r];
            }
            RowKind::Eq => {
                t.cells[r * width + art_col[r]] = 1.0;
                t.basis[r] = art_col[r];
            }
        }
    }

    let infeasible = |pivots| Solution {
        status: Status::Infeasible,
        x: vec![0.0; n],
        objective: 0.0,
        shadow_prices: vec![0.0; m],
        pivots,
    };

    if first_artificial < total {
        let mut phase1 = vec![0.0; total];
        for c in phase1.iter_mut().skip(first_artificial) {
            *c = -1.0;
        }
        t.set_costs(&phase1);
        t.optimize(&|_| true)?;
        let rhs_scale = lp.rows.iter().map(|r| r.rhs.abs()).fold(1.0, f64::max);
        if -t.rhs(t.cost_row()) > FEAS_TOL * rhs_scale {
            return Ok(infeasible(t.pivots));
        }
        // Drive zero-level artificials out of the basis where possible.
        for r in 0..m {
            if t.basis[r] >= first_artificial {
                let col = (0..first_artificial)
                    .filter(|&j| t.at(r, j).abs() > 1e-9)
                    .max_by(|&a, &b| t.at(r, a).abs().total_cmp(&t.at(r, b).abs()));
                if let Some(col) = col {
                    t.pivot(r, col);
                }
            }
        }
    }

    let mut phase2 = vec![0.0; total];
    phase2[..n].copy_from_slice(&lp.objective);
    t.set_costs(&phase2);
    if !t.optimize(&|j| j < first_artificial)? {
        return Ok(Solution {
            status: Status::Unbounded,
            x: vec![0.0; n],
            objective: f64::INFINITY,
            shadow_prices: vec![0.0; m],
            pivots: t.pivots,
        });
    }

    let mut x = vec![0.0; n];
    for r in 0..m {
        if t.basis[r] < n {
            x[t.basis[r]] = t.rhs(r).max(0.0);
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    let cost = t.cost_row();
    let shadow_prices = (0..m)
        .map(|r| {
            let y = match kinds[r] {
                RowKind::Le => t.at(cost, slack_col[r]),
                RowKind::Ge => -t.at(cost, slack_col[r]),
                RowKind::Eq => t.at(cost, art_col[r]),
            };
            sign[r] * y
        })
        .collect();
    Ok(Solution {
        status: Status::Optimal,
        x,
        objective,
        shadow_prices,
        pivots: t.pivots,
    })
}
