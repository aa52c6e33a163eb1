//! Dense two-phase simplex for small equality-form linear programs.
//!
//! Problems have the form
//!
//! ```text
//! maximize    c·x
//! subject to  A x = b,  x >= 0
//! ```
//!
//! which is exactly the shape of the no-signalling attack programs. The
//! solver works on a full tableau and then certifies the final basis from the
//! original data: `x_B` and the dual vector `y` are recomputed with a fresh LU
//! factorization, and the primal residual, dual residual and duality gap are
//! checked against fixed thresholds. A basis that fails the checks is reported
//! as [`LpStatus::NumericalFailure`], never as optimal.
//!
//! Pivoting is deterministic: the entering column is the one with the largest
//! reduced cost (lowest index on ties), the leaving row is the one with the
//! smallest ratio (lowest basic-variable index on ties). After a run of
//! degenerate pivots the solver falls back to Bland's rule until it makes
//! progress again. For `max x + y s.t. x + y = 1` this tie-breaking returns the
//! vertex `x = 1, y = 0`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pivot tolerance used by the presolve when deciding that a row is dependent.
pub const PRESOLVE_PIVOT_TOL: f64 = 1e-10;
pub const PRIMAL_FEAS_TOL: f64 = 1e-8;
pub const DUAL_FEAS_TOL: f64 = 1e-8;
pub const GAP_TOL: f64 = 1e-7;

const REDUCED_COST_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const DEGENERATE_RUN_BEFORE_BLAND: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqConstraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

/// `maximize objective·x` subject to the equality rows and `x >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    num_vars: usize,
    objective: Vec<f64>,
    eq_constraints: Vec<EqConstraint>,
}

impl LpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, objective: vec![0.0; num_vars], eq_constraints: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn eq_constraints(&self) -> &[EqConstraint] {
        &self.eq_constraints
    }

    pub fn set_objective(&mut self, objective: Vec<f64>) -> Result<()> {
        self.check_row(&objective, 0.0)?;
        self.objective = objective;
        Ok(())
    }

    pub fn set_objective_coeff(&mut self, var: usize, value: f64) -> Result<()> {
        self.check_row(&[], value)?;
        let slot = self
            .objective
            .get_mut(var)
            .ok_or_else(|| Error::Dimension(format!("objective index {var} >= {}", self.num_vars)))?;
        *slot = value;
        Ok(())
    }

    pub fn add_eq(&mut self, coeffs: Vec<f64>, rhs: f64) -> Result<()> {
        self.check_row(&coeffs, rhs)?;
        self.eq_constraints.push(EqConstraint { coeffs, rhs });
        Ok(())
    }

    /// Adds a row given as sparse `(var, coeff)` terms; repeated vars accumulate.
    pub fn add_eq_sparse(&mut self, terms: &[(usize, f64)], rhs: f64) -> Result<()> {
        let mut coeffs = vec![0.0; self.num_vars];
        for &(var, c) in terms {
            if var >= self.num_vars {
                return Err(Error::Dimension(format!("constraint index {var} >= {}", self.num_vars)));
            }
            coeffs[var] += c;
        }
        self.add_eq(coeffs, rhs)
    }

    fn check_row(&self, coeffs: &[f64], rhs: f64) -> Result<()> {
        if !coeffs.is_empty() && coeffs.len() != self.num_vars {
            return Err(Error::Dimension(format!(
                "row has {} coefficients, problem has {} variables",
                coeffs.len(),
                self.num_vars
            )));
        }
        if !rhs.is_finite() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidValue("non-finite LP coefficient".into()));
        }
        Ok(())
    }

    /// Writes the problem in CPLEX LP text layout, for cross-checking against
    /// external solvers.
    pub fn to_lp_format(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "\\ nsqkd dense LP: {} vars, {} rows", self.num_vars, self.eq_constraints.len());
        out.push_str("Maximize\n obj:");
        write_terms(&mut out, &self.objective);
        out.push_str("\nSubject To\n");
        for (i, row) in self.eq_constraints.iter().enumerate() {
            let _ = write!(out, " c{i}:");
            write_terms(&mut out, &row.coeffs);
            let _ = writeln!(out, " = {:?}", row.rhs);
        }
        out.push_str("Bounds\n");
        for j in 0..self.num_vars {
            let _ = writeln!(out, " x{j} >= 0");
        }
        out.push_str("End\n");
        out
    }
}

fn write_terms(out: &mut String, coeffs: &[f64]) {
    let mut any = false;
    for (j, &c) in coeffs.iter().enumerate() {
        if c != 0.0 {
            let sign = if c < 0.0 { '-' } else { '+' };
            let _ = write!(out, " {sign} {:?} x{j}", c.abs());
            any = true;
        }
    }
    if !any {
        out.push_str(" 0 x0");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

/// Residuals measured against the original problem data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// max |A x - b| and max(0, -x_j).
    pub primal: f64,
    /// max(0, c_j - A_j·y).
    pub dual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    /// One multiplier per original equality row (zero on rows the presolve dropped).
    pub dual: Vec<f64>,
    /// `b·y - c·x`, the primal/dual objective difference.
    pub duality_gap: f64,
    pub residuals: Residuals,
    pub iterations: usize,
    pub removed_rows: usize,
    pub message: String,
}

impl LpSolution {
    fn failed(status: LpStatus, p: &LpProblem, iterations: usize, message: impl Into<String>) -> Self {
        Self {
            status,
            x: vec![0.0; p.num_vars],
            objective_value: f64::NAN,
            dual: vec![0.0; p.eq_constraints.len()],
            duality_gap: f64::NAN,
            residuals: Residuals::default(),
            iterations,
            removed_rows: 0,
            message: message.into(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Turns anything but a certified optimum into an [`Error::Solver`].
    pub fn into_optimal(self) -> Result<Self> {
        if self.is_optimal() {
            Ok(self)
        } else {
            Err(Error::Solver {
                status: self.status,
                message: self.message,
                primal_residual: self.residuals.primal,
                dual_residual: self.residuals.dual,
                duality_gap: self.duality_gap,
            })
        }
    }
}

/// Indices of a maximal linearly independent subset of the equality rows,
/// found by forward elimination in row order. A dependent row whose reduced
/// right-hand side does not vanish makes the system inconsistent.
fn independent_rows(p: &LpProblem) -> std::result::Result<Vec<usize>, usize> {
    let n = p.num_vars;
    // reduced rows with pivot column, normalized so the pivot entry is 1
    let mut kept: Vec<(usize, Vec<f64>, f64)> = Vec::new();
    let mut keep_idx = Vec::new();
    for (i, row) in p.eq_constraints.iter().enumerate() {
        let scale = row.coeffs.iter().fold(row.rhs.abs(), |m, c| m.max(c.abs())).max(1.0);
        let mut r = row.coeffs.clone();
        let mut rhs = row.rhs;
        for (pc, k, krhs) in &kept {
            let f = r[*pc];
            if f != 0.0 {
                for (rj, kj) in r.iter_mut().zip(k) {
                    *rj -= f * kj;
                }
                rhs -= f * krhs;
            }
        }
        let (pc, pv) =
            r.iter()
                .enumerate()
                .fold((usize::MAX, 0.0f64), |(bj, bv), (j, &v)| if v.abs() > bv { (j, v.abs()) } else { (bj, bv) });
        if pv <= PRESOLVE_PIVOT_TOL * scale {
            if rhs.abs() > 1e-9 * scale {
                return Err(i);
            }
            continue;
        }
        let piv = r[pc];
        for v in r.iter_mut() {
            *v /= piv;
        }
        rhs /= piv;
        debug_assert!(pc < n);
        kept.push((pc, r, rhs));
        keep_idx.push(i);
    }
    Ok(keep_idx)
}

struct Tableau {
    rows: usize,
    width: usize, // structural + artificial + rhs
    data: Vec<f64>,
    obj: Vec<f64>, // reduced costs; obj[width-1] holds -(current objective)
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width - 1)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let pv = self.at(r, c);
        let (before, rest) = self.data.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for v in prow.iter_mut() {
            *v /= pv;
        }
        prow[c] = 1.0;
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[c];
            if f != 0.0 {
                for (x, p) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * p;
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (x, p) in self.obj.iter_mut().zip(prow.iter()) {
                *x -= f * p;
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Sets the reduced-cost row for cost vector `cost` (length width-1).
    fn price(&mut self, cost: &[f64]) {
        let w = self.width;
        self.obj.clear();
        self.obj.extend_from_slice(cost);
        self.obj.push(0.0);
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.data[i * w..(i + 1) * w];
                for (o, a) in self.obj.iter_mut().zip(row) {
                    *o -= cb * a;
                }
            }
        }
    }

    /// Runs simplex iterations over columns `< allowed`. Returns false when the
    /// program is unbounded in the current phase.
    fn optimize(&mut self, allowed: usize, iterations: &mut usize, max_iter: usize) -> Option<bool> {
        let mut degenerate_run = 0usize;
        loop {
            if *iterations >= max_iter {
                return None;
            }
            let bland = degenerate_run >= DEGENERATE_RUN_BEFORE_BLAND;
            let mut enter = None;
            let mut best = REDUCED_COST_TOL;
            for j in 0..allowed {
                let d = self.obj[j];
                if d > best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(c) = enter else {
                return Some(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, c);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            let tie = (ratio - lr).abs() <= 1e-12 * (1.0 + lr.abs());
                            if ratio < lr && !tie || tie && self.basis[i] < self.basis[li] {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else {
                return Some(false);
            };
            if ratio <= 1e-14 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c);
            *iterations += 1;
        }
    }
}

/// Solves `p`. Deterministic for identical input.
pub fn solve(p: &LpProblem) -> LpSolution {
    let n = p.num_vars;
    let kept = match independent_rows(p) {
        Ok(k) => k,
        Err(row) => {
            return LpSolution::failed(
                LpStatus::Infeasible,
                p,
                0,
                format!("equality row {row} is inconsistent with earlier rows"),
            )
        }
    };
    let m = kept.len();
    let width = n + m + 1;
    let mut data = vec![0.0; m * width];
    for (i, &ri) in kept.iter().enumerate() {
        let row = &p.eq_constraints[ri];
        let sign = if row.rhs < 0.0 { -1.0 } else { 1.0 };
        let dst = &mut data[i * width..(i + 1) * width];
        for (d, c) in dst[..n].iter_mut().zip(&row.coeffs) {
            *d = sign * c;
        }
        dst[n + i] = 1.0;
        dst[width - 1] = sign * row.rhs;
    }
    let mut t = Tableau { rows: m, width, data, obj: Vec::with_capacity(width), basis: (n..n + m).collect() };
    let max_iter = 50 * (n + m) + 1000;
    let mut iterations = 0usize;

    // phase I: maximize -sum(artificials)
    let mut cost1 = vec![0.0; n + m];
    for c in &mut cost1[n..] {
        *c = -1.0;
    }
    t.price(&cost1);
    if t.optimize(n + m, &mut iterations, max_iter).is_none() {
        return LpSolution::failed(LpStatus::NumericalFailure, p, iterations, "iteration limit in phase I");
    }
    let infeas: f64 = (0..m).filter(|&i| t.basis[i] >= n).map(|i| t.rhs(i)).sum();
    let bscale = kept.iter().fold(1.0f64, |s, &ri| s.max(p.eq_constraints[ri].rhs.abs()));
    if infeas > 1e-8 * bscale {
        return LpSolution::failed(
            LpStatus::Infeasible,
            p,
            iterations,
            format!("phase I ended with artificial mass {infeas:e}"),
        );
    }
    // drive remaining (zero-level) artificials out of the basis
    let mut dropped_rows = Vec::new();
    for i in 0..m {
        if t.basis[i] >= n {
            let col = (0..n).map(|j| (j, t.at(i, j).abs())).filter(|&(_, v)| v > 1e-7).fold(
                None::<(usize, f64)>,
                |b, (j, v)| match b {
                    Some((_, bv)) if bv >= v => b,
                    _ => Some((j, v)),
                },
            );
            match col {
                Some((j, _)) => {
                    t.pivot(i, j);
                    iterations += 1;
                }
                None => dropped_rows.push(i),
            }
        }
    }

    // phase II
    let mut cost2 = p.objective.clone();
    cost2.resize(n + m, 0.0);
    t.price(&cost2);
    match t.optimize(n, &mut iterations, max_iter) {
        None => return LpSolution::failed(LpStatus::NumericalFailure, p, iterations, "iteration limit in phase II"),
        Some(false) => return LpSolution::failed(LpStatus::Unbounded, p, iterations, "objective is unbounded"),
        Some(true) => {}
    }

    let rows: Vec<usize> = (0..m).filter(|i| !dropped_rows.contains(i)).collect();
    let basic: Vec<usize> = rows.iter().map(|&i| t.basis[i]).collect();
    let orig_rows: Vec<usize> = rows.iter().map(|&i| kept[i]).collect();
    certify(p, &orig_rows, &basic, iterations, p.eq_constraints.len() - orig_rows.len())
}

/// Recomputes the basic solution and dual multipliers of the basis
/// `basic` (over original rows `rows`) and checks them against the thresholds.
fn certify(p: &LpProblem, rows: &[usize], basic: &[usize], iterations: usize, removed_rows: usize) -> LpSolution {
    let n = p.num_vars;
    let k = rows.len();
    let bmat = DMatrix::from_fn(k, k, |i, j| p.eq_constraints[rows[i]].coeffs[basic[j]]);
    let rhs = DVector::from_iterator(k, rows.iter().map(|&r| p.eq_constraints[r].rhs));
    let cb = DVector::from_iterator(k, basic.iter().map(|&j| p.objective[j]));
    let lu = bmat.clone().lu();
    let (Some(xb), Some(y)) = (lu.solve(&rhs), bmat.transpose().lu().solve(&cb)) else {
        return LpSolution::failed(LpStatus::NumericalFailure, p, iterations, "final basis is singular");
    };

    let mut x = vec![0.0; n];
    let mut negativity = 0.0f64;
    for (&j, &v) in basic.iter().zip(xb.iter()) {
        if v < 0.0 {
            negativity = negativity.max(-v);
        }
        x[j] = v.max(0.0);
    }
    let mut dual = vec![0.0; p.eq_constraints.len()];
    for (&r, &v) in rows.iter().zip(y.iter()) {
        dual[r] = v;
    }

    let primal = p
        .eq_constraints
        .iter()
        .map(|row| (row.coeffs.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() - row.rhs).abs())
        .fold(negativity, f64::max);
    let mut dual_res = 0.0f64;
    for j in 0..n {
        let aty: f64 = p.eq_constraints.iter().zip(&dual).map(|(row, yi)| row.coeffs[j] * yi).sum();
        dual_res = dual_res.max(p.objective[j] - aty);
    }
    let primal_obj: f64 = p.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    let dual_obj: f64 = p.eq_constraints.iter().zip(&dual).map(|(row, yi)| row.rhs * yi).sum();
    let gap = dual_obj - primal_obj;
    let residuals = Residuals { primal, dual: dual_res };

    let ok = primal <= PRIMAL_FEAS_TOL && dual_res <= DUAL_FEAS_TOL && gap.abs() <= GAP_TOL;
    LpSolution {
        status: if ok { LpStatus::Optimal } else { LpStatus::NumericalFailure },
        x,
        objective_value: primal_obj,
        dual,
        duality_gap: gap,
        residuals,
        iterations,
        removed_rows,
        message: if ok {
            String::from("optimal")
        } else {
            format!("certificate rejected: primal {primal:e}, dual {dual_res:e}, gap {gap:e}")
        },
    }
}
