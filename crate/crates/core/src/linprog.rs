//! Dense two-phase primal simplex with Bland's rule.
//!
//! Every solution reported `Optimal` carries row duals and reduced costs, and
//! is checked for primal feasibility, dual feasibility and a zero duality gap
//! before it is returned. A solve that fails those checks is reported as
//! `NumericalBreakdown` rather than as an answer.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{check_len, EndowError, Result};

pub const PIVOT_TOL: f64 = 1e-10;
pub const FEASIBILITY_TOL: f64 = 1e-9;
const OPTIMALITY_TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalBreakdown,
}

/// `sense c^T x` subject to `rows[i] . x (rel) rhs[i]` and `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub relations: Vec<Relation>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// New program over `objective.len()` variables, all bounded in `[0, inf)`.
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            sense,
            objective,
            rows: Vec::new(),
            relations: Vec::new(),
            rhs: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn var_count(&self) -> usize {
        self.objective.len()
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        self.rows.push(coeffs);
        self.relations.push(relation);
        self.rhs.push(rhs);
        self
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower[var] = lower;
        self.upper[var] = upper;
        self
    }

    pub fn set_free(&mut self, var: usize) -> &mut Self {
        self.set_bounds(var, f64::NEG_INFINITY, f64::INFINITY)
    }

    fn check(&self) -> Result<()> {
        let n = self.var_count();
        check_len("lp relations", self.rows.len(), self.relations.len())?;
        check_len("lp rhs", self.rows.len(), self.rhs.len())?;
        check_len("lp lower bounds", n, self.lower.len())?;
        check_len("lp upper bounds", n, self.upper.len())?;
        for r in &self.rows {
            check_len("lp row", n, r.len())?;
            if r.iter().any(|v| !v.is_finite()) {
                return Err(EndowError::Lp("non-finite constraint coefficient".into()));
            }
        }
        if self.objective.iter().chain(&self.rhs).any(|v| !v.is_finite()) {
            return Err(EndowError::Lp("non-finite objective or right-hand side".into()));
        }
        if self.lower.iter().any(|&l| l == f64::INFINITY) || self.upper.iter().any(|&u| u == f64::NEG_INFINITY) {
            return Err(EndowError::Lp("empty variable bound".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub value: f64,
    pub x: Vec<f64>,
    /// Sensitivity of the optimal value to each right-hand side.
    pub duals: Vec<f64>,
    /// `c - A^T y` per variable.
    pub reduced_costs: Vec<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    pub pivots: usize,
}

impl LpSolution {
    fn failed(status: LpStatus, n: usize, m: usize, pivots: usize) -> Self {
        Self {
            status,
            value: f64::NAN,
            x: vec![f64::NAN; n],
            duals: vec![f64::NAN; m],
            reduced_costs: vec![f64::NAN; n],
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            duality_gap: f64::NAN,
            pivots,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Optimal solution or an error naming the status.
    pub fn into_optimal(self, context: &str) -> Result<Self> {
        if self.is_optimal() {
            Ok(self)
        } else {
            Err(EndowError::Lp(format!("{context}: {:?}", self.status)))
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = offset + col
    Shift { col: usize, offset: f64 },
    /// x = offset - col
    Flip { col: usize, offset: f64 },
    /// x = pos - neg
    Split { pos: usize, neg: usize },
}

struct Tableau {
    /// Original constraint matrix and right-hand side, for reinversion.
    orig: Vec<Vec<f64>>,
    orig_b: Vec<f64>,
    /// Cost of each column in the current phase.
    cost: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    /// Reduced costs, one per column.
    d: Vec<f64>,
    z: f64,
    basis: Vec<usize>,
    pivots: usize,
}

/// Pivots between refactorizations of the basis.
const REINVERT_EVERY: usize = 25;
/// Right-hand-side slack allowed by the two-pass ratio test.
const RATIO_SLACK: f64 = 1e-11;

impl Tableau {
    fn new(orig: Vec<Vec<f64>>, orig_b: Vec<f64>, cost: Vec<f64>, basis: Vec<usize>) -> Self {
        let mut t = Self {
            a: orig.clone(),
            b: orig_b.clone(),
            d: vec![0.0; cost.len()],
            z: 0.0,
            orig,
            orig_b,
            cost,
            basis,
            pivots: 0,
        };
        t.price();
        t
    }

    /// Recompute reduced costs and objective from the current rows.
    fn price(&mut self) {
        let m = self.a.len();
        for j in 0..self.cost.len() {
            self.d[j] = self.cost[j] - (0..m).map(|i| self.cost[self.basis[i]] * self.a[i][j]).sum::<f64>();
        }
        for &j in &self.basis {
            self.d[j] = 0.0;
        }
        self.z = (0..m).map(|i| self.cost[self.basis[i]] * self.b[i]).sum();
    }

    fn set_cost(&mut self, cost: Vec<f64>) {
        self.cost = cost;
        self.price();
    }

    /// Rebuild rows from the original data and the current basis. Leaves the
    /// tableau untouched if the basis matrix is numerically singular.
    fn reinvert(&mut self) -> bool {
        let m = self.a.len();
        if m == 0 {
            self.price();
            return true;
        }
        let total = self.cost.len();
        let bm = DMatrix::from_fn(m, m, |i, k| self.orig[i][self.basis[k]]);
        let rhs = DMatrix::from_fn(m, total + 1, |i, j| if j < total { self.orig[i][j] } else { self.orig_b[i] });
        let Some(x) = bm.lu().solve(&rhs) else { return false };
        if x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        for i in 0..m {
            for j in 0..total {
                self.a[i][j] = x[(i, j)];
            }
            for (k, &bj) in self.basis.iter().enumerate() {
                self.a[i][bj] = if i == k { 1.0 } else { 0.0 };
            }
            self.b[i] = x[(i, total)];
        }
        self.price();
        true
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.a[r][c];
        for v in self.a[r].iter_mut() {
            *v /= piv;
        }
        self.b[r] /= piv;
        let prow = self.a[r].clone();
        let pb = self.b[r];
        for i in 0..self.a.len() {
            if i == r {
                continue;
            }
            let f = self.a[i][c];
            if f != 0.0 {
                for (v, p) in self.a[i].iter_mut().zip(&prow) {
                    *v -= f * p;
                }
                self.b[i] -= f * pb;
                self.a[i][c] = 0.0;
            }
        }
        let f = self.d[c];
        if f != 0.0 {
            for (v, p) in self.d.iter_mut().zip(&prow) {
                *v -= f * p;
            }
            self.z += f * pb;
            self.d[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
        if self.pivots % REINVERT_EVERY == 0 {
            self.reinvert();
        }
    }

    /// Leaving row for entering column `c`. The first pass bounds the step
    /// with a small right-hand-side slack; the second picks the largest pivot
    /// within that bound, or the smallest basic index when `bland` is set.
    fn leaving_row(&self, c: usize, bland: bool) -> Option<usize> {
        let m = self.a.len();
        let mut theta = f64::INFINITY;
        for i in 0..m {
            let aic = self.a[i][c];
            if aic > PIVOT_TOL {
                theta = theta.min((self.b[i].max(0.0) + RATIO_SLACK) / aic);
            }
        }
        if !theta.is_finite() {
            return None;
        }
        let mut best: Option<usize> = None;
        for i in 0..m {
            let aic = self.a[i][c];
            if aic > PIVOT_TOL && self.b[i].max(0.0) / aic <= theta {
                best = match best {
                    None => Some(i),
                    Some(bi) if bland && self.basis[i] < self.basis[bi] => Some(i),
                    Some(bi) if !bland && aic > self.a[bi][c] => Some(i),
                    keep => keep,
                };
            }
        }
        best
    }

    /// Simplex iterations over columns `< eligible` with Bland's entering rule.
    /// Returns `Err(true)` on unboundedness, `Err(false)` on pivot budget
    /// exhaustion. Switches to Bland's leaving rule after `patience` pivots,
    /// and confirms optimality against a fresh factorization.
    fn run(&mut self, eligible: usize, cost_scale: f64) -> std::result::Result<(), bool> {
        let patience = self.pivots + 20 * (self.a.len() + eligible);
        let mut confirmed = 0;
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(false);
            }
            let Some(c) = (0..eligible).find(|&j| self.d[j] < -OPTIMALITY_TOL * cost_scale) else {
                if confirmed < 3 && self.reinvert() {
                    confirmed += 1;
                    if (0..eligible).any(|j| self.d[j] < -OPTIMALITY_TOL * cost_scale) {
                        continue;
                    }
                }
                return Ok(());
            };
            match self.leaving_row(c, self.pivots > patience) {
                Some(r) => self.pivot(r, c),
                None => return Err(true),
            }
        }
    }
}

/// Solve a linear program. Deterministic for a fixed input.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.check()?;
    let n = lp.var_count();
    let m0 = lp.row_count();

    let mut map = Vec::with_capacity(n);
    let mut ncols = 0usize;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        if l > u {
            return Ok(LpSolution::failed(LpStatus::Infeasible, n, m0, 0));
        }
        if l.is_finite() {
            map.push(VarMap::Shift { col: ncols, offset: l });
            if u.is_finite() {
                bound_rows.push((ncols, u - l));
            }
            ncols += 1;
        } else if u.is_finite() {
            map.push(VarMap::Flip { col: ncols, offset: u });
            ncols += 1;
        } else {
            map.push(VarMap::Split { pos: ncols, neg: ncols + 1 });
            ncols += 2;
        }
    }
    let nstruct = ncols;

    let sigma = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut cost = vec![0.0; nstruct];
    for j in 0..n {
        let c = sigma * lp.objective[j];
        match map[j] {
            VarMap::Shift { col, .. } => cost[col] += c,
            VarMap::Flip { col, .. } => cost[col] -= c,
            VarMap::Split { pos, neg } => {
                cost[pos] += c;
                cost[neg] -= c;
            }
        }
    }

    // standard-form rows over structural columns
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::with_capacity(m0 + bound_rows.len());
    for i in 0..m0 {
        let mut row = vec![0.0; nstruct];
        let mut rhs = lp.rhs[i];
        for j in 0..n {
            let a = lp.rows[i][j];
            if a == 0.0 {
                continue;
            }
            match map[j] {
                VarMap::Shift { col, offset } => {
                    row[col] += a;
                    rhs -= a * offset;
                }
                VarMap::Flip { col, offset } => {
                    row[col] -= a;
                    rhs -= a * offset;
                }
                VarMap::Split { pos, neg } => {
                    row[pos] += a;
                    row[neg] -= a;
                }
            }
        }
        rows.push((row, lp.relations[i], rhs));
    }
    for &(col, width) in &bound_rows {
        let mut row = vec![0.0; nstruct];
        row[col] = 1.0;
        rows.push((row, Relation::Le, width));
    }
    let m = rows.len();
    let nslack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let art0 = nstruct + nslack;
    let total = art0 + m;

    let mut sign = vec![1.0; m];
    let mut a = vec![vec![0.0; total]; m];
    let mut b = vec![0.0; m];
    let mut s = nstruct;
    for (i, (row, rel, rhs)) in rows.into_iter().enumerate() {
        a[i][..nstruct].copy_from_slice(&row);
        match rel {
            Relation::Le => {
                a[i][s] = 1.0;
                s += 1;
            }
            Relation::Ge => {
                a[i][s] = -1.0;
                s += 1;
            }
            Relation::Eq => {}
        }
        b[i] = rhs;
        if rhs < 0.0 {
            sign[i] = -1.0;
            for v in a[i][..art0].iter_mut() {
                *v = -*v;
            }
            b[i] = -rhs;
        }
        a[i][art0 + i] = 1.0;
    }

    let b_scale = 1.0 + b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let c_scale = 1.0 + cost.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

    // phase 1
    let phase1: Vec<f64> = (0..total).map(|j| if j >= art0 { 1.0 } else { 0.0 }).collect();
    let mut t = Tableau::new(a, b, phase1, (art0..total).collect());
    // phase 1 is bounded below by 0, so any failure here is numerical
    if t.run(art0, 1.0 + m as f64).is_err() {
        return Ok(LpSolution::failed(LpStatus::NumericalBreakdown, n, m0, t.pivots));
    }
    if t.z > FEASIBILITY_TOL * b_scale {
        return Ok(LpSolution::failed(LpStatus::Infeasible, n, m0, t.pivots));
    }
    // drive basic artificials out where a structural or slack pivot exists
    for i in 0..m {
        if t.basis[i] >= art0 {
            t.b[i] = 0.0;
            let mut best: Option<(usize, f64)> = None;
            for j in 0..art0 {
                let v = t.a[i][j].abs();
                if v > PIVOT_TOL && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                t.pivot(i, j);
            }
        }
    }

    // phase 2
    let mut phase2 = vec![0.0; total];
    phase2[..nstruct].copy_from_slice(&cost);
    t.set_cost(phase2);
    match t.run(art0, c_scale) {
        Ok(()) => {}
        Err(true) => return Ok(LpSolution::failed(LpStatus::Unbounded, n, m0, t.pivots)),
        Err(false) => return Ok(LpSolution::failed(LpStatus::NumericalBreakdown, n, m0, t.pivots)),
    }

    let mut col_val = vec![0.0; total];
    for i in 0..m {
        col_val[t.basis[i]] = t.b[i];
    }
    let x: Vec<f64> = map
        .iter()
        .map(|vm| match *vm {
            VarMap::Shift { col, offset } => offset + col_val[col],
            VarMap::Flip { col, offset } => offset - col_val[col],
            VarMap::Split { pos, neg } => col_val[pos] - col_val[neg],
        })
        .collect();
    // min-form duals of the original rows
    let y_min: Vec<f64> = (0..m0).map(|i| -t.d[art0 + i] * sign[i]).collect();
    let pivots = t.pivots;
    Ok(certify(lp, x, y_min, sigma, pivots))
}

fn certify(lp: &LinearProgram, x: Vec<f64>, y_min: Vec<f64>, sigma: f64, pivots: usize) -> LpSolution {
    let n = lp.var_count();
    let m = lp.row_count();

    let mut primal_res = 0.0f64;
    for i in 0..m {
        let ax: f64 = lp.rows[i].iter().zip(&x).map(|(a, v)| a * v).sum();
        let scale = 1.0 + lp.rhs[i].abs() + lp.rows[i].iter().zip(&x).map(|(a, v)| (a * v).abs()).sum::<f64>();
        let viol = match lp.relations[i] {
            Relation::Le => (ax - lp.rhs[i]).max(0.0),
            Relation::Ge => (lp.rhs[i] - ax).max(0.0),
            Relation::Eq => (ax - lp.rhs[i]).abs(),
        };
        primal_res = primal_res.max(viol / scale);
    }
    for j in 0..n {
        let scale = 1.0 + x[j].abs();
        primal_res = primal_res.max((lp.lower[j] - x[j]).max(0.0) / scale);
        primal_res = primal_res.max((x[j] - lp.upper[j]).max(0.0) / scale);
    }

    let c_min: Vec<f64> = lp.objective.iter().map(|c| sigma * c).collect();
    let c_scale = 1.0 + c_min.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let d_min: Vec<f64> = (0..n)
        .map(|j| c_min[j] - (0..m).map(|i| lp.rows[i][j] * y_min[i]).sum::<f64>())
        .collect();

    let mut dual_res = 0.0f64;
    for i in 0..m {
        let v = match lp.relations[i] {
            Relation::Le => y_min[i].max(0.0),
            Relation::Ge => (-y_min[i]).max(0.0),
            Relation::Eq => 0.0,
        };
        dual_res = dual_res.max(v / c_scale);
    }
    let zero_tol = FEASIBILITY_TOL * c_scale;
    let mut dual_value: f64 = lp.rhs.iter().zip(&y_min).map(|(b, y)| b * y).sum();
    for j in 0..n {
        let dj = d_min[j];
        if dj > zero_tol {
            if lp.lower[j].is_finite() {
                dual_value += dj * lp.lower[j];
            } else {
                dual_res = dual_res.max(dj / c_scale);
            }
        } else if dj < -zero_tol {
            if lp.upper[j].is_finite() {
                dual_value += dj * lp.upper[j];
            } else {
                dual_res = dual_res.max(-dj / c_scale);
            }
        } else if dj != 0.0 {
            // below tolerance: attribute to whichever bound the point sits on
            let bound = if dj > 0.0 { lp.lower[j] } else { lp.upper[j] };
            if bound.is_finite() {
                dual_value += dj * bound;
            } else {
                dual_value += dj * x[j];
            }
        }
    }
    let primal_value: f64 = c_min.iter().zip(&x).map(|(c, v)| c * v).sum();
    let gap = (primal_value - dual_value).abs() / (1.0 + primal_value.abs());

    let ok = primal_res <= FEASIBILITY_TOL && dual_res <= FEASIBILITY_TOL && gap <= FEASIBILITY_TOL;
    LpSolution {
        status: if ok { LpStatus::Optimal } else { LpStatus::NumericalBreakdown },
        value: sigma * primal_value,
        x,
        duals: y_min.iter().map(|y| sigma * y).collect(),
        reduced_costs: d_min.iter().map(|d| sigma * d).collect(),
        primal_residual: primal_res,
        dual_residual: dual_res,
        duality_gap: gap,
        pivots,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_constraint_max() {
        let mut lp = LinearProgram::new(Sense::Maximize, vec![1.0]);
        lp.add_row(vec![1.0], Relation::Le, 3.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_abs_diff_eq!(s.value, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.duals[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn instance_a_emm_system_has_unique_point() {
        let mut lp = LinearProgram::new(Sense::Minimize, vec![0.0, 0.0]);
        lp.add_row(vec![2.0, 0.5], Relation::Eq, 1.0);
        lp.add_row(vec![1.0, 1.0], Relation::Eq, 1.0);
        let s = solve_lp(&lp).unwrap();
        assert!(s.is_optimal());
        assert_abs_diff_eq!(s.x[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn instance_b_polytope_max_first_coordinate() {
        let mut lp = LinearProgram::new(Sense::Maximize, vec![1.0, 0.0, 0.0]);
        lp.add_row(vec![2.0, 1.0, 0.5], Relation::Eq, 1.0);
        lp.add_row(vec![1.0, 1.0, 1.0], Relation::Eq, 1.0);
        let s = solve_lp(&lp).unwrap();
        assert!(s.is_optimal());
        assert_abs_diff_eq!(s.value, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[2], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(Sense::Minimize, vec![1.0]);
        lp.add_row(vec![1.0], Relation::Ge, 2.0);
        lp.add_row(vec![1.0], Relation::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);

        let mut lp = LinearProgram::new(Sense::Maximize, vec![1.0, 1.0]);
        lp.add_row(vec![1.0, -1.0], Relation::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_and_boxed_variables() {
        // min x - 2y, x free, -1 <= y <= 2, x + y >= -3, x - y <= 4
        let mut lp = LinearProgram::new(Sense::Minimize, vec![1.0, -2.0]);
        lp.set_free(0).set_bounds(1, -1.0, 2.0);
        lp.add_row(vec![1.0, 1.0], Relation::Ge, -3.0);
        lp.add_row(vec![1.0, -1.0], Relation::Le, 4.0);
        let s = solve_lp(&lp).unwrap();
        assert!(s.is_optimal());
        // y = 2, x = -5
        assert_abs_diff_eq!(s.x[0], -5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.value, -9.0, epsilon = 1e-12);
    }

    #[test]
    fn upper_bounded_only_variable() {
        let mut lp = LinearProgram::new(Sense::Maximize, vec![1.0]);
        lp.set_bounds(0, f64::NEG_INFINITY, 1.5);
        let s = solve_lp(&lp).unwrap();
        assert!(s.is_optimal());
        assert_abs_diff_eq!(s.value, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.reduced_costs[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn redundant_equality_rows() {
        let mut lp = LinearProgram::new(Sense::Maximize, vec![1.0, 2.0]);
        lp.add_row(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.add_row(vec![2.0, 2.0], Relation::Eq, 2.0);
        let s = solve_lp(&lp).unwrap();
        assert!(s.is_optimal());
        assert_abs_diff_eq!(s.value, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut lp = LinearProgram::new(Sense::Maximize, vec![1.0, 2.0]);
        lp.add_row(vec![1.0], Relation::Eq, 1.0);
        assert!(solve_lp(&lp).is_err());
    }

    /// Feasible, bounded random LP: min c.x, A x <= b, 0 <= x, with c >= 0 and
    /// some mixed-relation rows that keep a known point feasible.
    fn random_lp(seed: u64) -> LinearProgram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..7);
        let m = rng.random_range(1..7);
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
        let mut lp = LinearProgram::new(Sense::Minimize, c);
        for j in 0..n {
            lp.set_bounds(j, 0.0, 5.0);
        }
        for i in 0..m {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let ax: f64 = row.iter().zip(&x0).map(|(a, b)| a * b).sum();
            match i % 3 {
                0 => lp.add_row(row, Relation::Le, ax + rng.random_range(0.0..1.0)),
                1 => lp.add_row(row, Relation::Ge, ax - rng.random_range(0.0..1.0)),
                _ => lp.add_row(row, Relation::Eq, ax),
            };
        }
        lp
    }

    /// Explicit dual of `random_lp`: bound rows become explicit constraints.
    fn explicit_dual(lp: &LinearProgram) -> LinearProgram {
        let n = lp.var_count();
        let m = lp.row_count();
        // variables: y (m rows) then w (n upper-bound rows, w <= 0)
        let mut obj = lp.rhs.clone();
        obj.extend(lp.upper.iter().copied());
        let mut d = LinearProgram::new(Sense::Maximize, obj);
        for i in 0..m {
            match lp.relations[i] {
                Relation::Le => d.set_bounds(i, f64::NEG_INFINITY, 0.0),
                Relation::Ge => d.set_bounds(i, 0.0, f64::INFINITY),
                Relation::Eq => d.set_free(i),
            };
        }
        for j in 0..n {
            d.set_bounds(m + j, f64::NEG_INFINITY, 0.0);
        }
        for j in 0..n {
            let mut row: Vec<f64> = (0..m).map(|i| lp.rows[i][j]).collect();
            row.extend((0..n).map(|k| if k == j { 1.0 } else { 0.0 }));
            d.add_row(row, Relation::Le, lp.objective[j]);
        }
        d
    }

    proptest! {
        #[test]
        fn strong_duality_against_explicit_dual(seed in 0u64..5000) {
            let lp = random_lp(seed);
            let s = solve_lp(&lp).unwrap();
            prop_assert_eq!(s.status, LpStatus::Optimal);
            let sd = solve_lp(&explicit_dual(&lp)).unwrap();
            prop_assert_eq!(sd.status, LpStatus::Optimal);
            prop_assert!((s.value - sd.value).abs() <= 1e-9 * (1.0 + s.value.abs()));
            prop_assert!(s.duality_gap <= 1e-9);
        }

        #[test]
        fn row_permutation_keeps_value(seed in 0u64..5000, rot in 0usize..6) {
            let lp = random_lp(seed);
            let s = solve_lp(&lp).unwrap();
            let mut p = lp.clone();
            let m = p.row_count();
            let k = rot % m;
            p.rows.rotate_left(k);
            p.relations.rotate_left(k);
            p.rhs.rotate_left(k);
            let sp = solve_lp(&p).unwrap();
            prop_assert_eq!(sp.status, LpStatus::Optimal);
            prop_assert!((s.value - sp.value).abs() <= 1e-9 * (1.0 + s.value.abs()));
        }
    }

    #[test]
    fn deterministic() {
        let lp = random_lp(7);
        assert_eq!(solve_lp(&lp).unwrap(), solve_lp(&lp).unwrap());
    }
}
