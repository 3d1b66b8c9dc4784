//! Invariant suite over one market and utility.
//!
//! Every named invariant yields one row with the worst value over portfolios
//! and samples. Solver errors become failed rows, never aborts.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{EndowError, Result};
use crate::geometry::{find_emm, Geometry};
use crate::market::{combined_payoff, Market, Portfolio};
use crate::pricing::Pricer;
use crate::solver::{DualSolution, PrimalSolution, SolverOptions};
use crate::utility::{check_invariants, UtilitySpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteOptions {
    /// Adds the cold cutting-plane and price-minimization checks.
    pub deep: bool,
    /// Scales the dual candidate by 1.01 before certification.
    pub inject_fault: bool,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            deep: true,
            inject_fault: false,
            samples: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst residual or slack observed; `None` for purely boolean checks.
    pub worst: Option<f64>,
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceReport {
    pub id: String,
    pub utility: String,
    pub leaves: usize,
    pub claims: usize,
    pub portfolios: Vec<Portfolio>,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl InstanceReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn worst(&self, name: &str) -> f64 {
        self.check(name).and_then(|c| c.worst).unwrap_or(f64::NAN)
    }
}

/// Accumulates one row per invariant, in first-seen order.
#[derive(Default)]
struct Table {
    order: Vec<String>,
    rows: BTreeMap<String, Check>,
}

impl Table {
    fn entry(&mut self, name: &str, tolerance: Option<f64>) -> &mut Check {
        if !self.rows.contains_key(name) {
            self.order.push(name.to_string());
            self.rows.insert(
                name.to_string(),
                Check {
                    name: name.to_string(),
                    passed: true,
                    worst: None,
                    tolerance,
                    detail: None,
                },
            );
        }
        self.rows.get_mut(name).expect("row inserted above")
    }

    /// Records `value <= tolerance`.
    fn bound(&mut self, name: &str, value: f64, tolerance: f64) {
        let row = self.entry(name, Some(tolerance));
        row.worst = Some(row.worst.map_or(value, |w| w.max(value)));
        if !(value <= tolerance) {
            row.passed = false;
        }
    }

    fn flag(&mut self, name: &str, ok: bool, detail: impl FnOnce() -> String) {
        let row = self.entry(name, None);
        if !ok {
            row.passed = false;
            row.detail.get_or_insert_with(detail);
        }
    }

    fn error(&mut self, name: &str, e: &EndowError) {
        let row = self.entry(name, None);
        row.passed = false;
        row.detail.get_or_insert_with(|| e.to_string());
    }

    fn finish(self) -> Vec<Check> {
        let mut rows = self.rows;
        self.order.iter().filter_map(|n| rows.remove(n)).collect()
    }
}

/// Five portfolios `q = c (1, .., 1)`, `c in {0, 1, 1/2, -1/2, 2}`, each
/// financed with one unit above its least admissible capital.
pub fn default_portfolios(market: &Market) -> Result<Vec<Portfolio>> {
    let geo = Geometry::new(&market.tree)?;
    let n = market.claims.len();
    [0.0, 1.0, 0.5, -0.5, 2.0]
        .iter()
        .map(|&c| {
            let q = vec![c; n];
            let neg: Vec<f64> = q.iter().map(|v| -v).collect();
            let x = geo.support_beta(&market.claims, &neg)? + 1.0;
            Ok(Portfolio::new(x, q))
        })
        .collect()
}

struct Solved {
    portfolio: Portfolio,
    primal: PrimalSolution,
    dual: DualSolution,
}

pub fn verify_instance(
    id: &str,
    market: &Market,
    utility: &UtilitySpec,
    portfolios: &[Portfolio],
    options: &SuiteOptions,
    solver_options: &SolverOptions,
) -> InstanceReport {
    let mut t = Table::default();
    let tree = &market.tree;
    let claims = &market.claims;
    let tol_cert = solver_options.tol_cert;

    let diag = tree.validate();
    t.flag("tree validation", diag.passed(), || diag.failures().join(", "));
    let ureport = check_invariants(utility);
    t.flag("utility invariants", ureport.passed(), || {
        ureport.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect::<Vec<_>>().join(", ")
    });

    let report = |t: Table| {
        let checks = t.finish();
        InstanceReport {
            id: id.to_string(),
            utility: crate::utility::Utility::label(utility),
            leaves: tree.leaf_count(),
            claims: claims.len(),
            portfolios: portfolios.to_vec(),
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    };

    if let Err(e) = find_emm(tree) {
        t.error("interior martingale measure", &e);
        return report(t);
    }
    t.flag("interior martingale measure", true, String::new);
    let pricer = match Pricer::with_options(tree, claims, utility, *solver_options) {
        Ok(p) => p,
        Err(e) => {
            t.error("endowment reduction", &e);
            return report(t);
        }
    };
    let solver = pricer.solver();
    let geo = solver.geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let measures = match geo.sample_measures(10, options.seed) {
        Ok(m) => m,
        Err(e) => {
            t.error("martingale equality", &e);
            return report(t);
        }
    };

    // gains have zero expectation under every sampled measure
    let dim = tree.strategy_dim();
    for _ in 0..100 {
        let h: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x0 = rng.random_range(-2.0..2.0);
        let w: Vec<f64> = tree.gains_flat(&h).iter().map(|g| x0 + g).collect();
        for m in &measures {
            t.bound("martingale equality", (m.expectation(&w) - x0).abs(), 1e-9);
        }
    }

    match geo.lemma7_report(claims) {
        Ok(l7) => {
            let red = solver.reduction();
            let direction_ok = match &l7.replicable_direction {
                None => red.kept.len() == claims.len(),
                Some(q) => combined_payoff(claims, q, tree.leaf_count())
                    .and_then(|g| geo.is_replicable(&g))
                    .map(|r| r.replicable)
                    .unwrap_or(false),
            };
            t.flag("endowment reduction", direction_ok, || format!("{l7:?}"));
        }
        Err(e) => t.error("endowment reduction", &e),
    }

    let fin = solver.finiteness_diagnostics();
    t.flag("finiteness", fin.passed, || format!("elasticity {}", fin.elasticity.value));

    let mut solved: Vec<Solved> = Vec::new();
    for pf in portfolios {
        let primal = match solver.solve_primal(pf.x, &pf.q) {
            Ok(p) => p,
            Err(e) => {
                t.error("primal convergence", &e);
                continue;
            }
        };
        t.bound(
            "primal convergence",
            primal.gradient_norm / (1.0 + primal.value.abs()),
            solver_options.tol_grad,
        );
        let bound = fin.wealth_bound(pf.x, &pf.q);
        let peak = primal.consumption.iter().copied().fold(0.0, f64::max);
        t.flag("a-priori wealth bound", peak <= bound * (1.0 + 1e-9), || format!("{peak} > {bound}"));

        let mut dual = match solver.extract_dual_candidate(&primal) {
            Ok((d, _)) => d,
            Err(e) => {
                t.error("marginal relation", &e);
                continue;
            }
        };
        if options.inject_fault {
            dual.h.iter_mut().for_each(|h| *h *= 1.01);
        }
        match solver.certify(&primal, &mut dual) {
            Ok(c) => {
                t.bound("marginal relation", c.marginal_residual, 1e-9);
                t.bound("budget identity", c.budget_residual, 1e-9);
                t.bound("martingale stationarity", c.martingale_residual, tol_cert);
                t.flag("subgradient in dual cone", c.in_l, || format!("margin {:e}", c.in_l_margin));
                t.bound("dual feasibility", c.separation_value - 1.0, c.separation_tolerance);
            }
            Err(e) => t.error("marginal relation", &e),
        }
        if !options.inject_fault {
            match solver.conjugacy_gap(pf.x, &pf.q) {
                Ok(g) => t.bound("conjugacy gap", g.gap / (1.0 + g.u.abs()), 1e-7),
                Err(e) => t.error("conjugacy gap", &e),
            }
        }

        // monotone in capital
        match solver.solve_primal(pf.x + 0.1 * (1.0 + pf.x.abs()), &pf.q) {
            Ok(up) => t.bound("monotonicity", primal.value - up.value, 0.0),
            Err(e) => t.error("monotonicity", &e),
        }
        // another Newton start reaches the same wealth
        let hedge = {
            let endow = combined_payoff(claims, &pf.q, tree.leaf_count()).unwrap_or_default();
            let neg: Vec<f64> = endow.iter().map(|v| -v).collect();
            geo.superreplicate(&neg).map(|s| s.strategy.flatten())
        };
        match hedge.and_then(|hs| {
            let start: Vec<f64> = hs
                .iter()
                .zip(primal.strategy.flatten())
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            solver.solve_primal_from(pf.x, &pf.q, Some(&start))
        }) {
            Ok(other) => {
                let d = other
                    .terminal_wealth
                    .iter()
                    .zip(&primal.terminal_wealth)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                t.bound("uniqueness", d, 1e-7);
            }
            Err(e) => t.error("uniqueness", &e),
        }
        match solver.subgradient(pf.x, &pf.q) {
            Ok(s) => {
                t.flag("finite-difference gradient", s.agrees, || {
                    format!("fd {:?} vs ({}, {:?})", s.finite_difference, s.point.y, s.point.r)
                });
                t.flag("subgradient in dual cone", s.in_l, String::new);
            }
            Err(e) => t.error("finite-difference gradient", &e),
        }
        match pricer.consistency_check(pf.x, &pf.q) {
            Ok(c) => t.flag("price consistency", c.passed, || format!("{:?}", c.claims)),
            Err(e) => t.error("price consistency", &e),
        }
        match pricer.certainty_equivalent(pf.x, &pf.q) {
            Ok(ce) => t.bound("certainty equivalent", ce.residual, 1e-8 * (1.0 + primal.value.abs())),
            Err(e) => t.error("certainty equivalent", &e),
        }
        let red = solver.reduction();
        if red.kept.is_empty() && !claims.is_empty() {
            let (_, cash, _) = red.reduce_position(&pf.q);
            match solver.value_w(pf.x + cash) {
                Ok(w) => t.bound("replicable collapse", (primal.value - w).abs(), 1e-7),
                Err(e) => t.error("replicable collapse", &e),
            }
        }
        if options.deep && !options.inject_fault {
            match solver.solve_dual(dual.y, &dual.r) {
                Ok(cold) => t.bound(
                    "cold dual agreement",
                    (cold.value - dual.value).abs() / (1.0 + dual.value.abs()),
                    1e-7,
                ),
                Err(e) => t.error("cold dual agreement", &e),
            }
        }
        solved.push(Solved {
            portfolio: pf.clone(),
            primal,
            dual,
        });
    }

    // cross pairs
    for a in &solved {
        for b in &solved {
            let rhs = b.dual.value
                + a.portfolio.x * b.dual.y
                + a.portfolio.q.iter().zip(&b.dual.r).map(|(q, r)| q * r).sum::<f64>();
            t.bound("weak duality", a.primal.value - rhs, 1e-9 * (1.0 + rhs.abs()));
        }
    }
    for (i, a) in solved.iter().enumerate() {
        for b in &solved[i + 1..] {
            let x = 0.5 * (a.portfolio.x + b.portfolio.x);
            let q: Vec<f64> = a.portfolio.q.iter().zip(&b.portfolio.q).map(|(u, v)| 0.5 * (u + v)).collect();
            match solver.solve_primal(x, &q) {
                Ok(m) => t.bound("concavity", 0.5 * (a.primal.value + b.primal.value) - m.value, 1e-9),
                Err(e) => t.error("concavity", &e),
            }
        }
    }
    sample_bipolarity(&mut t, market, &solved, &measures, &mut rng, options.samples);

    if options.deep && !options.inject_fault && solver.reduction().kept.len() <= 1 {
        match solver.value_w_tilde(1.0) {
            Ok(w) => t.bound("price minimization", w.difference, 1e-6),
            Err(e) => t.error("price minimization", &e),
        }
    }
    report(t)
}

/// Primal-feasible payoffs against sampled measures and dual-feasible
/// variables.
fn sample_bipolarity(
    t: &mut Table,
    market: &Market,
    solved: &[Solved],
    measures: &[crate::geometry::MeasureDensity],
    rng: &mut ChaCha8Rng,
    samples: usize,
) {
    if solved.is_empty() {
        return;
    }
    let tree = &market.tree;
    let claims = &market.claims;
    let prob = tree.leaf_measure();
    let leaves = tree.leaf_count();
    let dim = tree.strategy_dim();
    // g <= x + gains(H) + <q, f> with nonnegative right side
    let mut primal = Vec::with_capacity(samples);
    for _ in 0..samples {
        let q: Vec<f64> = (0..claims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let Ok(endow) = combined_payoff(claims, &q, leaves) else { return };
        let base: Vec<f64> = tree.gains_flat(&h).iter().zip(&endow).map(|(a, b)| a + b).collect();
        let x = -base.iter().copied().fold(f64::INFINITY, f64::min) + rng.random_range(0.0..1.0);
        let g: Vec<f64> = base.iter().map(|b| (x + b) * rng.random_range(0.0..=1.0)).collect();
        primal.push((x, q, g));
    }
    for (x, q, g) in &primal {
        for m in measures {
            let bound = x + q.iter().zip(claims).map(|(qi, c)| qi * m.expectation(&c.payoff)).sum::<f64>();
            t.bound("bipolar sandwich", m.expectation(g) - bound, 1e-9 * (1.0 + bound.abs()));
        }
    }
    // nonnegative combinations of dual candidates, shrunk leafwise
    for _ in 0..samples {
        let w: Vec<f64> = solved.iter().map(|_| rng.random_range(0.0..1.0)).collect();
        let mut h = vec![0.0; leaves];
        let mut y = 0.0;
        let mut r = vec![0.0; claims.len()];
        for (wk, s) in w.iter().zip(solved) {
            for (a, b) in h.iter_mut().zip(&s.dual.h) {
                *a += wk * b;
            }
            y += wk * s.dual.y;
            for (a, b) in r.iter_mut().zip(&s.dual.r) {
                *a += wk * b;
            }
        }
        h.iter_mut().for_each(|v| *v *= rng.random_range(0.0..=1.0));
        for (x, q, g) in &primal {
            let eh_g: f64 = prob.iter().zip(&h).zip(g).map(|((p, a), b)| p * a * b).sum();
            let rhs = x * y + q.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
            t.bound("dual bipolarity", eh_g - rhs, 1e-9 * (1.0 + rhs.abs()));
        }
    }
}
