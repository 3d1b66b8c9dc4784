//! Primal and dual utility maximization with random endowment, and the
//! certificates tying them together.
//!
//! The primal maximizes `E[U(x + gains(H) + <q, f>)]` over sign-free holdings
//! by damped Newton. The dual minimizes `E[V(h)]` over
//! `{h > 0 : E[h Z] <= x y + <q, r>}` for every nonnegative `Z = x + gains(H) +
//! <q, f>` by cutting planes; each restricted problem is solved through its
//! Lagrangian dual `max_{lambda >= 0} E[U(sum_k lambda_k Z_k)] - sum_k lambda_k`
//! with a log barrier, whose maximizer gives `h = U'(sum_k lambda_k Z_k)`.
//! Replicable directions of the claims are projected out before either solve.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, EndowError, Result};
use crate::geometry::{martingale_system, EndowmentReduction, Geometry};
use crate::linprog::{solve_lp, LinearProgram, LpStatus, Relation, Sense};
use crate::market::{combined_payoff, expectation, Claim, ScenarioTree, Strategy};
use crate::utility::{asymptotic_elasticity, golden_section, Elasticity, Utility};

/// Smallest utility argument a line search may visit.
pub const WEALTH_FLOOR: f64 = 1e-12;
/// Separation optimum bound certifying dual feasibility.
pub const SEPARATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Newton stops once `|grad|_inf <= tol_grad (1 + |u|)`.
    pub tol_grad: f64,
    /// Tolerance of the optimality certificates.
    pub tol_cert: f64,
    pub max_newton: usize,
    pub max_cut_rounds: usize,
    /// Relative finite-difference step and agreement tolerance.
    pub fd_step: f64,
    pub fd_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_grad: 1e-10,
            tol_cert: 1e-8,
            max_newton: 200,
            max_cut_rounds: 50,
            fd_step: 1e-4,
            fd_tol: 1e-3,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.tol_grad, self.tol_cert, self.fd_step, self.fd_tol]
            .iter()
            .all(|t| *t > 0.0 && t.is_finite())
            && self.max_newton > 0
            && self.max_cut_rounds > 0;
        if ok {
            Ok(())
        } else {
            Err(EndowError::InvalidInput("solver tolerances and limits must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimalSolution {
    pub x: f64,
    pub q: Vec<f64>,
    pub strategy: Strategy,
    /// `X_T = x + gains(H)`.
    pub terminal_wealth: Vec<f64>,
    /// `g = X_T + <q, f>`, strictly positive.
    pub consumption: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualSource {
    FromPrimal,
    CuttingPlane,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualSolution {
    /// Terminal dual variable per leaf, strictly positive.
    pub h: Vec<f64>,
    pub y: f64,
    pub r: Vec<f64>,
    /// `v(y, r) = E[V(h)]`.
    pub value: f64,
    /// Largest `E[h Z]` over nonnegative positions with unit cost.
    pub separation_value: f64,
    pub source: DualSource,
    pub cut_rounds: usize,
}

/// Residuals of the optimality relations between a primal and a dual solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityCertificate {
    /// `max |h - U'(g)|`.
    pub marginal_residual: f64,
    /// `|E[h g] - (x y + <q, r>)|`.
    pub budget_residual: f64,
    /// Largest nodewise `|E[h dS | node]| / y`.
    pub martingale_residual: f64,
    pub in_l: bool,
    pub in_l_margin: f64,
    pub separation_value: f64,
    /// Allowed separation excess: `tolerance` propagated through the
    /// maximizing strategy of the separation program.
    pub separation_tolerance: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubgradientPoint {
    pub y: f64,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Subgradient {
    pub point: SubgradientPoint,
    /// Central differences of `u` in `(x, q_1, .., q_N)`.
    pub finite_difference: Vec<f64>,
    pub agrees: bool,
    pub in_l: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Separation {
    pub feasible: bool,
    pub value: f64,
    pub x: f64,
    pub q: Vec<f64>,
    pub strategy: Vec<f64>,
    /// Violating position's payoff `Z`, nonnegative, with unit cost.
    pub payoff: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjugacyGap {
    pub u: f64,
    pub y: f64,
    pub r: Vec<f64>,
    pub v: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WTilde {
    /// `min_p v(y, y p)`.
    pub value: f64,
    pub argmin: Vec<f64>,
    /// Dual value without endowment constraints.
    pub direct: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinitenessReport {
    pub elasticity: Elasticity,
    pub elasticity_below_one: bool,
    pub emm: Vec<f64>,
    pub min_leaf_q: f64,
    /// `E_Q[f_i]` under the interior measure.
    pub expected_claims: Vec<f64>,
    pub passed: bool,
}

impl FinitenessReport {
    /// A-priori bound on any nonnegative consumption financed from `(x, q)`.
    pub fn wealth_bound(&self, x: f64, q: &[f64]) -> f64 {
        (x + q.iter().zip(&self.expected_claims).map(|(a, b)| a * b).sum::<f64>()) / self.min_leaf_q
    }
}

/// Solver bound to one market, claim set and utility. Holds the reduction of
/// the claims so repeated solves share it.
#[derive(Debug, Clone)]
pub struct Solver<'a> {
    tree: &'a ScenarioTree,
    claims: &'a [Claim],
    utility: &'a dyn Utility,
    geometry: Geometry<'a>,
    reduction: EndowmentReduction,
    options: SolverOptions,
    prob: Vec<f64>,
}

impl<'a> Solver<'a> {
    pub fn new(tree: &'a ScenarioTree, claims: &'a [Claim], utility: &'a dyn Utility) -> Result<Self> {
        Self::with_options(tree, claims, utility, SolverOptions::default())
    }

    pub fn with_options(
        tree: &'a ScenarioTree,
        claims: &'a [Claim],
        utility: &'a dyn Utility,
        options: SolverOptions,
    ) -> Result<Self> {
        options.validate()?;
        let geometry = Geometry::new(tree)?;
        let reduction = geometry.reduce_endowments(claims)?;
        Ok(Self {
            tree,
            claims,
            utility,
            geometry,
            reduction,
            options,
            prob: tree.leaf_measure(),
        })
    }

    pub fn tree(&self) -> &ScenarioTree {
        self.tree
    }

    pub fn claims(&self) -> &[Claim] {
        self.claims
    }

    pub fn utility(&self) -> &dyn Utility {
        self.utility
    }

    pub fn geometry(&self) -> &Geometry<'a> {
        &self.geometry
    }

    pub fn reduction(&self) -> &EndowmentReduction {
        &self.reduction
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    fn demote_certificates(&self) -> bool {
        !asymptotic_elasticity(self.utility).below_one()
    }

    pub fn solve_primal(&self, x: f64, q: &[f64]) -> Result<PrimalSolution> {
        self.solve_primal_from(x, q, None)
    }

    /// Primal solve from a chosen starting strategy; the start must keep the
    /// utility argument positive at every leaf.
    pub fn solve_primal_from(&self, x: f64, q: &[f64], start: Option<&[f64]>) -> Result<PrimalSolution> {
        check_len("claim quantities", self.claims.len(), q.len())?;
        let k = self.geometry.in_k(self.claims, x, q)?;
        if !k.member {
            return Err(EndowError::NotInK {
                x,
                min_capital: k.min_capital,
            });
        }
        let red = &self.reduction;
        let (q_red, cash, shift) = red.reduce_position(q);
        let x_red = x + cash;
        let base: Vec<f64> = combined_payoff(&red.reduced, &q_red, self.tree.leaf_count())?
            .into_iter()
            .map(|e| e + x_red)
            .collect();
        let dim = self.tree.strategy_dim();

        let h0 = match start {
            Some(s) => {
                check_len("starting strategy", dim, s.len())?;
                s.iter().zip(&shift).map(|(a, b)| a + b).collect()
            }
            None if base.iter().all(|&b| b > WEALTH_FLOOR) => vec![0.0; dim],
            None => {
                let neg: Vec<f64> = base.iter().map(|b| x_red - b).collect();
                self.geometry.superreplicate(&neg)?.strategy.flatten()
            }
        };
        let (h_red, value, gnorm, iterations) = self.newton(&base, h0)?;

        let holdings: Vec<f64> = h_red.iter().zip(&shift).map(|(a, b)| a - b).collect();
        let gains = self.tree.gains_flat(&holdings);
        let terminal_wealth: Vec<f64> = gains.iter().map(|g| x + g).collect();
        let endow = combined_payoff(self.claims, q, self.tree.leaf_count())?;
        let consumption = terminal_wealth.iter().zip(&endow).map(|(a, b)| a + b).collect();
        Ok(PrimalSolution {
            x,
            q: q.to_vec(),
            strategy: Strategy::from_flat(self.tree, &holdings)?,
            terminal_wealth,
            consumption,
            value,
            gradient_norm: gnorm,
            iterations,
        })
    }

    fn primal_state(&self, base: &[f64], h: &[f64]) -> Option<(Vec<f64>, f64)> {
        let g: Vec<f64> = self.tree.gains_flat(h).iter().zip(base).map(|(a, b)| a + b).collect();
        if g.iter().any(|&v| !(v >= WEALTH_FLOOR) || !v.is_finite()) {
            return None;
        }
        let u = self.prob.iter().zip(&g).map(|(p, v)| p * self.utility.value(*v)).sum();
        Some((g, u))
    }

    fn primal_gradient(&self, g: &[f64]) -> Vec<f64> {
        let gm = self.tree.gains_matrix();
        let dim = self.tree.strategy_dim();
        let mut grad = vec![0.0; dim];
        for (l, row) in gm.iter().enumerate() {
            let w = self.prob[l] * self.utility.marginal(g[l]);
            for (gr, a) in grad.iter_mut().zip(row) {
                *gr += w * a;
            }
        }
        grad
    }

    /// Damped Newton on the strictly concave objective; the Hessian is
    /// pseudo-inverted so redundant assets do not break the step.
    fn newton(&self, base: &[f64], mut h: Vec<f64>) -> Result<(Vec<f64>, f64, f64, usize)> {
        let gm = self.tree.gains_matrix();
        let dim = self.tree.strategy_dim();
        let (mut g, mut u) = self.primal_state(base, &h).ok_or_else(|| {
            EndowError::InvalidInput("starting strategy leaves nonpositive wealth".into())
        })?;
        let mut polish = 0;
        for iter in 0..self.options.max_newton {
            let grad = self.primal_gradient(&g);
            let gnorm = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let tol = self.options.tol_grad * (1.0 + u.abs());
            if gnorm <= tol {
                if polish >= 3 || gnorm == 0.0 {
                    return Ok((h, u, gnorm, iter));
                }
                polish += 1;
            }
            let mut hess = DMatrix::<f64>::zeros(dim, dim);
            for (l, row) in gm.iter().enumerate() {
                let w = -self.prob[l] * self.utility.curvature(g[l]);
                for i in 0..dim {
                    if row[i] == 0.0 {
                        continue;
                    }
                    for j in 0..dim {
                        hess[(i, j)] += w * row[i] * row[j];
                    }
                }
            }
            let d = pseudo_solve(hess, &grad);
            let slope: f64 = d.iter().zip(&grad).map(|(a, b)| a * b).sum();
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-20 {
                let trial: Vec<f64> = h.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                if let Some((g_new, u_new)) = self.primal_state(base, &trial) {
                    let armijo = u_new >= u + 1e-4 * t * slope;
                    // in the quadratic regime roundoff hides the ascent; accept
                    // full steps that shrink the gradient or keep the objective
                    // within roundoff. The max-norm alone can stall on a
                    // stiff direction while a flat one is still unconverged.
                    let local = t == 1.0 && {
                        let gn = self.primal_gradient(&g_new);
                        gn.iter().fold(0.0f64, |a, v| a.max(v.abs())) < gnorm
                            || u_new >= u - 8.0 * f64::EPSILON * (1.0 + u.abs())
                    };
                    if armijo || local {
                        h = trial;
                        g = g_new;
                        u = u_new;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                if gnorm <= tol {
                    return Ok((h, u, gnorm, iter));
                }
                break;
            }
        }
        let grad = self.primal_gradient(&g);
        let gnorm = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if gnorm <= self.options.tol_grad * (1.0 + u.abs()) {
            return Ok((h, u, gnorm, self.options.max_newton));
        }
        Err(EndowError::NonConvergence {
            what: "primal Newton",
            iterations: self.options.max_newton,
        })
    }

    /// `h = U'(g)`, `y = E[h]`, `r_i = E[h f_i]`, certified against the primal.
    pub fn extract_dual_candidate(&self, primal: &PrimalSolution) -> Result<(DualSolution, OptimalityCertificate)> {
        let h: Vec<f64> = primal.consumption.iter().map(|g| self.utility.marginal(*g)).collect();
        let y = expectation(&self.prob, &h);
        let r: Vec<f64> = self
            .claims
            .iter()
            .map(|c| self.prob.iter().zip(&h).zip(&c.payoff).map(|((p, a), f)| p * a * f).sum())
            .collect();
        let value = self.dual_value(&h);
        let mut dual = DualSolution {
            h,
            y,
            r,
            value,
            separation_value: f64::NAN,
            source: DualSource::FromPrimal,
            cut_rounds: 0,
        };
        let cert = self.certify(primal, &mut dual)?;
        if !cert.passed && !self.demote_certificates() {
            return Err(EndowError::CertificateFailure(cert.failures.join("; ")));
        }
        Ok((dual, cert))
    }

    /// Evaluates the optimality relations; fills in the dual's separation value.
    pub fn certify(&self, primal: &PrimalSolution, dual: &mut DualSolution) -> Result<OptimalityCertificate> {
        let leaf_count = self.tree.leaf_count();
        check_len("dual variable", leaf_count, dual.h.len())?;
        let tol = self.options.tol_cert;
        let marginal_residual = primal
            .consumption
            .iter()
            .zip(&dual.h)
            .map(|(g, h)| (h - self.utility.marginal(*g)).abs())
            .fold(0.0, f64::max);
        let eh_g: f64 = self
            .prob
            .iter()
            .zip(&dual.h)
            .zip(&primal.consumption)
            .map(|((p, h), g)| p * h * g)
            .sum();
        let budget = primal.x * dual.y + primal.q.iter().zip(&dual.r).map(|(a, b)| a * b).sum::<f64>();
        let budget_residual = (eh_g - budget).abs();
        let weighted: Vec<f64> = self.prob.iter().zip(&dual.h).map(|(p, h)| p * h / dual.y).collect();
        let martingale_residual = martingale_system(self.tree).residual(&weighted);
        let memb = self.geometry.in_l(self.claims, dual.y, &dual.r)?;
        let mut failures = Vec::new();
        let red = &self.reduction;
        let r_red: Vec<f64> = red.kept.iter().map(|&i| dual.r[i]).collect();
        for (i, want) in red.expand_dual(dual.y, &r_red).iter().enumerate() {
            if (dual.r[i] - want).abs() > tol * (1.0 + want.abs()) {
                failures.push(format!("r[{i}] = {} differs from the replication value {want}", dual.r[i]));
            }
        }
        let mut separation_tolerance = tol;
        if memb.member {
            let sep = self.dual_separation(&dual.h, dual.y, &dual.r)?;
            dual.separation_value = sep.value;
            // E[h G H*] <= y * martingale residual * |H*|_1, so stationarity
            // within `tol` licenses this much excess at the maximizer H*
            let h_norm: f64 = sep.strategy.iter().map(|v| v.abs()).sum();
            separation_tolerance = tol * (1.0 + dual.y * h_norm);
            if sep.value > 1.0 + separation_tolerance {
                failures.push(format!(
                    "separation value {} exceeds 1 + {separation_tolerance:e}",
                    sep.value
                ));
            }
        } else {
            failures.push(format!("(y, r) outside the dual cone, margin {:e}", memb.margin));
        }
        let scale = 1.0 + budget.abs();
        if marginal_residual > tol {
            failures.push(format!("marginal relation residual {marginal_residual:e}"));
        }
        if budget_residual > tol * scale {
            failures.push(format!("budget identity residual {budget_residual:e}"));
        }
        if martingale_residual > tol {
            failures.push(format!("martingale stationarity residual {martingale_residual:e}"));
        }
        Ok(OptimalityCertificate {
            marginal_residual,
            budget_residual,
            martingale_residual,
            in_l: memb.member,
            in_l_margin: memb.margin,
            separation_value: dual.separation_value,
            separation_tolerance,
            tolerance: tol,
            passed: failures.is_empty(),
            failures,
        })
    }

    fn dual_value(&self, h: &[f64]) -> f64 {
        self.prob.iter().zip(h).map(|(p, v)| p * self.utility.conjugate(*v)).sum()
    }

    /// `max E[h Z]` over `Z = x + gains(H) + <q, f> >= 0` with `x y + <q, r> = 1`.
    /// Solved over the non-replicable claims, whose null directions would
    /// otherwise turn convergence noise into spurious unboundedness; the
    /// dropped claims get zero quantity in the maximizer.
    pub fn dual_separation(&self, h: &[f64], y: f64, r: &[f64]) -> Result<Separation> {
        reduced_separation(self.tree, self.claims, &self.reduction, &self.prob, h, y, r)
    }

    /// Cold cutting-plane dual solve.
    pub fn solve_dual(&self, y: f64, r: &[f64]) -> Result<DualSolution> {
        self.solve_dual_warm(y, r, &[])
    }

    /// Cutting-plane dual solve seeded with extra unit-cost cuts.
    pub fn solve_dual_warm(&self, y: f64, r: &[f64], cuts: &[Vec<f64>]) -> Result<DualSolution> {
        check_len("dual claim prices", self.claims.len(), r.len())?;
        let memb = self.geometry.in_l(self.claims, y, r)?;
        if !memb.member {
            return Err(EndowError::NotInL(format!(
                "y = {y}, r = {r:?}, margin {:e}",
                memb.margin
            )));
        }
        let red = &self.reduction;
        let r_red: Vec<f64> = red.kept.iter().map(|&i| r[i]).collect();
        for (i, want) in red.expand_dual(y, &r_red).iter().enumerate() {
            if (r[i] - want).abs() > 1e-9 * (1.0 + r[i].abs()) {
                return Err(EndowError::NotInL(format!(
                    "r[{i}] = {} differs from the replication value {want}",
                    r[i]
                )));
            }
        }
        let l = self.tree.leaf_count();
        let mut zs: Vec<Vec<f64>> = vec![vec![1.0 / y; l]];
        let mut lambda = vec![1.0];
        for c in cuts {
            check_len("cut", l, c.len())?;
            if c.iter().any(|v| *v < -1e-12) {
                return Err(EndowError::InvalidInput("cuts must be nonnegative".into()));
            }
            zs.push(c.iter().map(|v| v.max(0.0)).collect());
            lambda.push(1.0);
        }
        if !cuts.is_empty() {
            lambda[0] = 1e-3;
        }
        for round in 0..self.options.max_cut_rounds {
            lambda = restricted_dual(self.utility, &self.prob, &zs, lambda)?;
            let g = combine(&zs, &lambda);
            let h: Vec<f64> = g.iter().map(|v| self.utility.marginal(*v)).collect();
            let sep = separation_lp(self.tree, &red.reduced, &self.prob, &h, y, &r_red)?;
            if sep.feasible {
                return Ok(DualSolution {
                    value: self.dual_value(&h),
                    h,
                    y,
                    r: r.to_vec(),
                    separation_value: sep.value,
                    source: DualSource::CuttingPlane,
                    cut_rounds: round + 1,
                });
            }
            zs.push(sep.payoff);
            lambda.push(1e-3);
        }
        Err(EndowError::NonConvergence {
            what: "cutting-plane dual",
            iterations: self.options.max_cut_rounds,
        })
    }

    /// `|u(x, q) - (v(y, r) + x y + <q, r>)|` at the primal's dual candidate,
    /// with `v` from the warm-started cutting-plane solve.
    pub fn conjugacy_gap(&self, x: f64, q: &[f64]) -> Result<ConjugacyGap> {
        let primal = self.solve_primal(x, q)?;
        let (cand, _) = self.extract_dual_candidate(&primal)?;
        let budget = x * cand.y + q.iter().zip(&cand.r).map(|(a, b)| a * b).sum::<f64>();
        let cut: Vec<f64> = primal.consumption.iter().map(|g| g / budget).collect();
        let dual = self.solve_dual_warm(cand.y, &cand.r, &[cut])?;
        let gap = (primal.value - (dual.value + budget)).abs();
        let tolerance = 1e-7 * (1.0 + primal.value.abs());
        Ok(ConjugacyGap {
            u: primal.value,
            y: cand.y,
            r: cand.r,
            v: dual.value,
            gap,
            tolerance,
            passed: gap <= tolerance,
        })
    }

    /// Dual candidate `(y, r)` checked against central differences of `u`.
    pub fn subgradient(&self, x: f64, q: &[f64]) -> Result<Subgradient> {
        let primal = self.solve_primal(x, q)?;
        let (cand, cert) = self.extract_dual_candidate(&primal)?;
        let step = self.options.fd_step * (1.0 + x.abs());
        let mut fd = Vec::with_capacity(q.len() + 1);
        fd.push((self.solve_primal(x + step, q)?.value - self.solve_primal(x - step, q)?.value) / (2.0 * step));
        for i in 0..q.len() {
            let mut up = q.to_vec();
            let mut dn = q.to_vec();
            up[i] += step;
            dn[i] -= step;
            fd.push((self.solve_primal(x, &up)?.value - self.solve_primal(x, &dn)?.value) / (2.0 * step));
        }
        let exact: Vec<f64> = std::iter::once(cand.y).chain(cand.r.iter().copied()).collect();
        let scale = exact.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let agrees = fd
            .iter()
            .zip(&exact)
            .all(|(a, b)| (a - b).abs() <= self.options.fd_tol * b.abs().max(scale));
        Ok(Subgradient {
            point: SubgradientPoint { y: cand.y, r: cand.r },
            finite_difference: fd,
            agrees,
            in_l: cert.in_l,
        })
    }

    /// `w(x) = u(x, 0)`.
    pub fn value_w(&self, x: f64) -> Result<f64> {
        Ok(self.solve_primal(x, &vec![0.0; self.claims.len()])?.value)
    }

    /// `min_p v(y, y p)` by coordinate descent over the kept claims, checked
    /// against the dual value without endowment constraints.
    pub fn value_w_tilde(&self, y: f64) -> Result<WTilde> {
        if !(y > 0.0) {
            return Err(EndowError::InvalidInput(format!("y must be positive, got {y}")));
        }
        let red = &self.reduction;
        let kept = &red.reduced;
        let n = kept.len();
        let mut p: Vec<f64> = kept.iter().map(|c| self.geometry.emm().expectation(&c.payoff)).collect();
        let failure: RefCell<Option<EndowError>> = RefCell::new(None);
        let eval = |p_red: &[f64]| -> f64 {
            let r = red.expand_dual(y, &p_red.iter().map(|v| y * v).collect::<Vec<_>>());
            match self.solve_dual(y, &r) {
                Ok(d) => d.value,
                Err(EndowError::NotInL(_)) => f64::INFINITY,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    f64::INFINITY
                }
            }
        };
        let mut value = eval(&p);
        let mut converged = n == 0;
        for _ in 0..50 {
            if converged {
                break;
            }
            let mut moved = 0.0f64;
            for j in 0..n {
                let (lo, hi) = coordinate_interval(self.tree, kept, &p, j)?;
                let pad = 1e-6 * (hi - lo);
                let (arg, val) = golden_section(lo + pad, hi - pad, 1e-9 * (1.0 + hi - lo), |t| {
                    let mut trial = p.clone();
                    trial[j] = t;
                    eval(&trial)
                });
                if val <= value {
                    moved = moved.max((arg - p[j]).abs());
                    p[j] = arg;
                    value = val;
                }
            }
            converged = moved < 1e-8;
        }
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        if !converged {
            return Err(EndowError::NonConvergence {
                what: "coordinate descent over prices",
                iterations: 50,
            });
        }
        let free = Solver::with_options(self.tree, &[], self.utility, self.options)?;
        let direct = free.solve_dual(y, &[])?.value;
        let difference = (value - direct).abs();
        if difference > 1e-6 {
            return Err(EndowError::CertificateFailure(format!(
                "min over prices {value} differs from the unconstrained dual {direct}"
            )));
        }
        Ok(WTilde {
            value,
            argmin: red.expand_price(&p),
            direct,
            difference,
        })
    }

    pub fn finiteness_diagnostics(&self) -> FinitenessReport {
        let elasticity = asymptotic_elasticity(self.utility);
        let emm = self.geometry.emm();
        let min_leaf_q = emm.q.iter().copied().fold(f64::INFINITY, f64::min);
        let expected_claims: Vec<f64> = self.claims.iter().map(|c| emm.expectation(&c.payoff)).collect();
        FinitenessReport {
            elasticity_below_one: elasticity.below_one(),
            elasticity,
            emm: emm.q.clone(),
            min_leaf_q,
            expected_claims,
            passed: elasticity.below_one() && min_leaf_q > 0.0,
        }
    }
}

fn pseudo_solve(a: DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let eig = SymmetricEigen::new(a);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = 1e-12 * top.max(f64::MIN_POSITIVE);
    let bv = DVector::from_column_slice(b);
    let coords = eig.eigenvectors.transpose() * bv;
    let scaled = DVector::from_iterator(
        coords.len(),
        coords
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(c, l)| if *l > cutoff { c / l } else { 0.0 }),
    );
    (eig.eigenvectors * scaled).iter().copied().collect()
}

fn combine(zs: &[Vec<f64>], lambda: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; zs[0].len()];
    for (z, l) in zs.iter().zip(lambda) {
        for (a, b) in g.iter_mut().zip(z) {
            *a += l * b;
        }
    }
    g
}

/// `max_{lambda > 0} E[U(sum lambda_k Z_k)] - sum lambda_k + mu sum ln lambda_k`
/// for `mu` decreasing to `1e-14`.
fn restricted_dual(u: &dyn Utility, prob: &[f64], zs: &[Vec<f64>], init: Vec<f64>) -> Result<Vec<f64>> {
    let k = zs.len();
    let mut lambda: Vec<f64> = init.into_iter().map(|v| v.max(1e-3)).collect();
    let objective = |lam: &[f64], mu: f64| -> Option<f64> {
        if lam.iter().any(|v| *v <= 0.0) {
            return None;
        }
        let g = combine(zs, lam);
        if g.iter().any(|v| !(*v > 0.0)) {
            return None;
        }
        let eu: f64 = prob.iter().zip(&g).map(|(p, v)| p * u.value(*v)).sum();
        Some(eu - lam.iter().sum::<f64>() + mu * lam.iter().map(|v| v.ln()).sum::<f64>())
    };
    let mut mu = 1.0;
    while mu >= 1e-14 {
        let mut f = objective(&lambda, mu).ok_or_else(|| {
            EndowError::InvalidInput("restricted dual start leaves nonpositive wealth".into())
        })?;
        for _ in 0..200 {
            let g = combine(zs, &lambda);
            let mut grad = vec![0.0; k];
            let mut hess = DMatrix::<f64>::zeros(k, k);
            for (l, &gl) in g.iter().enumerate() {
                let m = prob[l] * u.marginal(gl);
                let c = -prob[l] * u.curvature(gl);
                for a in 0..k {
                    let za = zs[a][l];
                    if za == 0.0 {
                        continue;
                    }
                    grad[a] += m * za;
                    for b in 0..k {
                        hess[(a, b)] += c * za * zs[b][l];
                    }
                }
            }
            for a in 0..k {
                grad[a] += mu / lambda[a] - 1.0;
                hess[(a, a)] += mu / (lambda[a] * lambda[a]);
            }
            let d = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&DVector::from_column_slice(&grad)).iter().copied().collect(),
                None => pseudo_solve(hess, &grad),
            };
            let decrement: f64 = d.iter().zip(&grad).map(|(a, b)| a * b).sum();
            // centrality: complementarity products within a fraction of mu
            let centred = lambda.iter().zip(&grad).all(|(l, g)| (l * g).abs() <= 1e-2 * mu);
            if centred || decrement <= 1e-30 {
                break;
            }
            let mut t: f64 = 1.0;
            for (a, da) in lambda.iter().zip(&d) {
                if *da < 0.0 {
                    t = t.min(-0.99 * a / da);
                }
            }
            let mut accepted = false;
            while t > 1e-20 {
                let trial: Vec<f64> = lambda.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                if let Some(ft) = objective(&trial, mu) {
                    let flat = decrement < 1e-10 && ft >= f - 1e-14 * (1.0 + f.abs());
                    if ft >= f + 1e-4 * t * decrement || flat {
                        lambda = trial;
                        f = ft;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        mu *= 0.1;
    }
    Ok(lambda)
}

fn reduced_separation(
    tree: &ScenarioTree,
    claims: &[Claim],
    red: &EndowmentReduction,
    prob: &[f64],
    h: &[f64],
    y: f64,
    r: &[f64],
) -> Result<Separation> {
    check_len("dual claim prices", claims.len(), r.len())?;
    let r_red: Vec<f64> = red.kept.iter().map(|&i| r[i]).collect();
    let mut sep = separation_lp(tree, &red.reduced, prob, h, y, &r_red)?;
    let mut q = vec![0.0; claims.len()];
    for (&k, v) in red.kept.iter().zip(&sep.q) {
        q[k] = *v;
    }
    sep.q = q;
    Ok(sep)
}

fn separation_lp(
    tree: &ScenarioTree,
    claims: &[Claim],
    prob: &[f64],
    h: &[f64],
    y: f64,
    r: &[f64],
) -> Result<Separation> {
    let l = tree.leaf_count();
    check_len("dual variable", l, h.len())?;
    check_len("dual claim prices", claims.len(), r.len())?;
    if h.iter().any(|v| !(*v >= 0.0)) {
        return Err(EndowError::InvalidInput("dual variable must be nonnegative".into()));
    }
    if !(y > 0.0) {
        return Err(EndowError::NotInL(format!("y = {y} is not positive")));
    }
    let n = claims.len();
    let dim = tree.strategy_dim();
    let gm = tree.gains_matrix();
    // variables: x, q (n), H (dim); all free
    let nv = 1 + n + dim;
    let mut obj = vec![0.0; nv];
    for leaf in 0..l {
        let w = prob[leaf] * h[leaf];
        obj[0] += w;
        for (i, c) in claims.iter().enumerate() {
            obj[1 + i] += w * c.payoff[leaf];
        }
        for j in 0..dim {
            obj[1 + n + j] += w * gm[leaf][j];
        }
    }
    let mut lp = LinearProgram::new(Sense::Maximize, obj);
    for v in 0..nv {
        lp.set_free(v);
    }
    for leaf in 0..l {
        let mut row = vec![0.0; nv];
        row[0] = 1.0;
        for (i, c) in claims.iter().enumerate() {
            row[1 + i] = c.payoff[leaf];
        }
        row[1 + n..].copy_from_slice(&gm[leaf]);
        lp.add_row(row, Relation::Ge, 0.0);
    }
    let mut norm = vec![0.0; nv];
    norm[0] = y;
    norm[1..1 + n].copy_from_slice(r);
    lp.add_row(norm, Relation::Eq, 1.0);
    let s = solve_lp(&lp)?;
    match s.status {
        LpStatus::Optimal => {}
        LpStatus::Unbounded => {
            return Err(EndowError::NotInL("separation program is unbounded".into()));
        }
        other => return Err(EndowError::Lp(format!("separation: {other:?}"))),
    }
    let x = s.x[0];
    let q = s.x[1..1 + n].to_vec();
    let strategy = s.x[1 + n..].to_vec();
    let gains = tree.gains_flat(&strategy);
    let endow = combined_payoff(claims, &q, l)?;
    let payoff = gains
        .iter()
        .zip(&endow)
        .map(|(g, e)| (x + g + e).max(0.0))
        .collect();
    Ok(Separation {
        feasible: s.value <= 1.0 + SEPARATION_TOL,
        value: s.value,
        x,
        q,
        strategy,
        payoff,
    })
}

/// Range of `E_Q[f_j]` over martingale measures matching the other prices.
fn coordinate_interval(tree: &ScenarioTree, claims: &[Claim], p: &[f64], j: usize) -> Result<(f64, f64)> {
    let mut bounds = [0.0; 2];
    for (b, sense) in bounds.iter_mut().zip([Sense::Minimize, Sense::Maximize]) {
        let sys = martingale_system(tree);
        let mut lp = LinearProgram::new(sense, claims[j].payoff.clone());
        for (row, rhs) in sys.rows.into_iter().zip(sys.rhs) {
            lp.add_row(row, Relation::Eq, rhs);
        }
        for (k, c) in claims.iter().enumerate() {
            if k != j {
                lp.add_row(c.payoff.clone(), Relation::Eq, p[k]);
            }
        }
        *b = solve_lp(&lp)?.into_optimal("price interval")?.value;
    }
    Ok((bounds[0], bounds[1]))
}

pub fn solve_primal(tree: &ScenarioTree, claims: &[Claim], u: &dyn Utility, x: f64, q: &[f64]) -> Result<PrimalSolution> {
    Solver::new(tree, claims, u)?.solve_primal(x, q)
}

pub fn extract_dual_candidate(
    primal: &PrimalSolution,
    u: &dyn Utility,
    tree: &ScenarioTree,
    claims: &[Claim],
) -> Result<DualSolution> {
    Ok(Solver::new(tree, claims, u)?.extract_dual_candidate(primal)?.0)
}

pub fn dual_separation(tree: &ScenarioTree, claims: &[Claim], h: &[f64], y: f64, r: &[f64]) -> Result<Separation> {
    let geo = Geometry::new(tree)?;
    let m = geo.in_l(claims, y, r)?;
    if !m.member {
        return Err(EndowError::NotInL(format!("margin {:e}", m.margin)));
    }
    let red = geo.reduce_endowments(claims)?;
    reduced_separation(tree, claims, &red, &tree.leaf_measure(), h, y, r)
}

pub fn solve_dual(tree: &ScenarioTree, claims: &[Claim], u: &dyn Utility, y: f64, r: &[f64]) -> Result<DualSolution> {
    Solver::new(tree, claims, u)?.solve_dual(y, r)
}

pub fn conjugacy_gap(tree: &ScenarioTree, claims: &[Claim], u: &dyn Utility, x: f64, q: &[f64]) -> Result<ConjugacyGap> {
    Solver::new(tree, claims, u)?.conjugacy_gap(x, q)
}

pub fn subgradient(tree: &ScenarioTree, claims: &[Claim], u: &dyn Utility, x: f64, q: &[f64]) -> Result<Subgradient> {
    Solver::new(tree, claims, u)?.subgradient(x, q)
}

pub fn value_w(tree: &ScenarioTree, u: &dyn Utility, x: f64) -> Result<f64> {
    Solver::new(tree, &[], u)?.value_w(x)
}

pub fn value_w_tilde(tree: &ScenarioTree, claims: &[Claim], u: &dyn Utility, y: f64) -> Result<WTilde> {
    Solver::new(tree, claims, u)?.value_w_tilde(y)
}

pub fn finiteness_diagnostics(tree: &ScenarioTree, claims: &[Claim], u: &dyn Utility) -> Result<FinitenessReport> {
    Ok(Solver::new(tree, claims, u)?.finiteness_diagnostics())
}
