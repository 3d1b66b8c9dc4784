//! Utility-based prices, certainty equivalents and their consistency with
//! the superreplication bounds.

use serde::Serialize;

use crate::error::{check_len, EndowError, Result};
use crate::market::{Claim, ScenarioTree};
use crate::solver::{Solver, SolverOptions};
use crate::utility::Utility;

/// `|w(x + e) - u(x, q)|` bound for the certainty equivalent.
pub const CE_TOL: f64 = 1e-8;
/// Margin for the strict superreplication bounds.
const BOUND_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertaintyEquivalent {
    /// Cash amount `e` with `w(x + e) = u(x, q)`.
    pub value: f64,
    /// `e / q` for a single claim held in nonzero quantity.
    pub per_unit: Option<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimConsistency {
    pub name: String,
    pub price: f64,
    pub lower: f64,
    pub upper: f64,
    pub replicable: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub claims: Vec<ClaimConsistency>,
    /// Reduced (non-replicable) components lie in the open price set.
    pub in_price_set: bool,
    pub price_set_margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifferentiabilityProbe {
    /// One-sided derivatives of `u` in `(x, q_1, .., q_N)`.
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub step: f64,
    pub unique_price: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceReport {
    pub utility_price: Vec<f64>,
    pub certainty_equivalent: CertaintyEquivalent,
    pub consistency: ConsistencyReport,
    pub probe: DifferentiabilityProbe,
}

/// Pricing over one market, claim set and utility.
#[derive(Debug, Clone)]
pub struct Pricer<'a> {
    solver: Solver<'a>,
    free: Solver<'a>,
}

impl<'a> Pricer<'a> {
    pub fn new(tree: &'a ScenarioTree, claims: &'a [Claim], utility: &'a dyn Utility) -> Result<Self> {
        Self::with_options(tree, claims, utility, SolverOptions::default())
    }

    pub fn with_options(
        tree: &'a ScenarioTree,
        claims: &'a [Claim],
        utility: &'a dyn Utility,
        options: SolverOptions,
    ) -> Result<Self> {
        Ok(Self {
            solver: Solver::with_options(tree, claims, utility, options)?,
            free: Solver::with_options(tree, &[], utility, options)?,
        })
    }

    pub fn solver(&self) -> &Solver<'a> {
        &self.solver
    }

    /// `r / y` at the primal's dual candidate; replicable directions carry
    /// their replication values exactly.
    pub fn utility_based_price(&self, x: f64, q: &[f64]) -> Result<Vec<f64>> {
        let primal = self.solver.solve_primal(x, q)?;
        let (dual, _) = self.solver.extract_dual_candidate(&primal)?;
        let red = self.solver.reduction();
        let kept: Vec<f64> = red.kept.iter().map(|&i| dual.r[i] / dual.y).collect();
        Ok(red.expand_price(&kept))
    }

    pub fn certainty_equivalent(&self, x: f64, q: &[f64]) -> Result<CertaintyEquivalent> {
        check_len("claim quantities", self.solver.claims().len(), q.len())?;
        let u = self.solver.solve_primal(x, q)?.value;
        let w = |e: f64| -> Result<f64> {
            match self.free.value_w(x + e) {
                Err(EndowError::NotInK { .. }) => Ok(f64::NEG_INFINITY),
                other => other,
            }
        };
        let per_unit = |e: f64| (q.len() == 1 && q[0] != 0.0).then(|| e / q[0]);
        if q.iter().all(|v| *v == 0.0) {
            return Ok(CertaintyEquivalent {
                value: 0.0,
                per_unit: None,
                residual: (w(0.0)? - u).abs(),
            });
        }
        // w is strictly increasing on (-x, inf)
        let mut hi = 1.0 + x.abs();
        let mut expansions = 0;
        while w(hi)? < u {
            hi *= 2.0;
            expansions += 1;
            if expansions > 60 {
                return Err(EndowError::BracketFailure { lo: -x, hi });
            }
        }
        let mut lo = 0.0f64.min(hi);
        let mut gap = x + lo;
        expansions = 0;
        while w(lo)? > u {
            gap *= 0.5;
            lo = -x + gap;
            expansions += 1;
            if expansions > 200 {
                return Err(EndowError::BracketFailure { lo, hi });
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= 1e-14 * (1.0 + mid.abs()) {
                break;
            }
            if w(mid)? < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let e = 0.5 * (lo + hi);
        let residual = (w(e)? - u).abs();
        if residual > CE_TOL * (1.0 + u.abs()) {
            return Err(EndowError::CertificateFailure(format!(
                "certainty equivalent residual {residual:e}"
            )));
        }
        Ok(CertaintyEquivalent {
            value: e,
            per_unit: per_unit(e),
            residual,
        })
    }

    pub fn consistency_check(&self, x: f64, q: &[f64]) -> Result<ConsistencyReport> {
        let price = self.utility_based_price(x, q)?;
        self.consistency_of(&price)
    }

    /// Checks a price vector against replication costs, superreplication
    /// bounds and the price set of the reduced claims.
    pub fn consistency_of(&self, price: &[f64]) -> Result<ConsistencyReport> {
        let geo = self.solver.geometry();
        let claims = self.solver.claims();
        check_len("price vector", claims.len(), price.len())?;
        let mut rows = Vec::with_capacity(claims.len());
        for (c, &p) in claims.iter().zip(price) {
            let rep = geo.is_replicable(&c.payoff)?;
            let passed = if rep.replicable {
                (p - rep.cost).abs() <= 1e-9 * (1.0 + rep.cost.abs())
            } else {
                p > rep.lower + BOUND_MARGIN && p < rep.cost - BOUND_MARGIN
            };
            rows.push(ClaimConsistency {
                name: c.name.clone(),
                price: p,
                lower: rep.lower,
                upper: rep.cost,
                replicable: rep.replicable,
                passed,
            });
        }
        let red = self.solver.reduction();
        let kept: Vec<f64> = red.kept.iter().map(|&i| price[i]).collect();
        let memb = geo.in_price_set(&red.reduced, &kept)?;
        Ok(ConsistencyReport {
            passed: memb.member && rows.iter().all(|r| r.passed),
            in_price_set: memb.member,
            price_set_margin: memb.margin,
            claims: rows,
        })
    }

    pub fn differentiability_probe(&self, x: f64, q: &[f64]) -> Result<DifferentiabilityProbe> {
        let opts = self.solver.options();
        let step = opts.fd_step * (1.0 + x.abs());
        let u = |x: f64, q: &[f64]| self.solver.solve_primal(x, q).map(|s| s.value);
        let centre = u(x, q)?;
        let mut left = Vec::with_capacity(q.len() + 1);
        let mut right = Vec::with_capacity(q.len() + 1);
        right.push((u(x + step, q)? - centre) / step);
        left.push((centre - u(x - step, q)?) / step);
        for i in 0..q.len() {
            let mut up = q.to_vec();
            let mut dn = q.to_vec();
            up[i] += step;
            dn[i] -= step;
            right.push((u(x, &up)? - centre) / step);
            left.push((centre - u(x, &dn)?) / step);
        }
        let scale = left.iter().chain(&right).fold(0.0f64, |a, v| a.max(v.abs()));
        let unique_price = left
            .iter()
            .zip(&right)
            .all(|(l, r)| (l - r).abs() <= opts.fd_tol * scale);
        Ok(DifferentiabilityProbe {
            left,
            right,
            step,
            unique_price,
        })
    }

    pub fn report(&self, x: f64, q: &[f64]) -> Result<PriceReport> {
        let utility_price = self.utility_based_price(x, q)?;
        Ok(PriceReport {
            certainty_equivalent: self.certainty_equivalent(x, q)?,
            consistency: self.consistency_of(&utility_price)?,
            probe: self.differentiability_probe(x, q)?,
            utility_price,
        })
    }
}

pub fn utility_based_price(tree: &ScenarioTree, claims: &[Claim], u: &dyn Utility, x: f64, q: &[f64]) -> Result<Vec<f64>> {
    Pricer::new(tree, claims, u)?.utility_based_price(x, q)
}

pub fn certainty_equivalent(
    tree: &ScenarioTree,
    claims: &[Claim],
    u: &dyn Utility,
    x: f64,
    q: &[f64],
) -> Result<CertaintyEquivalent> {
    Pricer::new(tree, claims, u)?.certainty_equivalent(x, q)
}

pub fn consistency_check(tree: &ScenarioTree, claims: &[Claim], u: &dyn Utility, x: f64, q: &[f64]) -> Result<ConsistencyReport> {
    Pricer::new(tree, claims, u)?.consistency_check(x, q)
}

pub fn differentiability_probe(
    tree: &ScenarioTree,
    claims: &[Claim],
    u: &dyn Utility,
    x: f64,
    q: &[f64],
) -> Result<DifferentiabilityProbe> {
    Pricer::new(tree, claims, u)?.differentiability_probe(x, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{instance_a, instance_b};
    use crate::utility::UtilitySpec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, prop_assume, proptest, ProptestConfig};

    const LOG: UtilitySpec = UtilitySpec::Log;
    const THIRD: f64 = 1.0 / 3.0;

    #[test]
    fn utility_price_examples() {
        let b = instance_b();
        let p = utility_based_price(&b.tree, &b.claims, &LOG, 1.0, &[1.0]).unwrap();
        assert_abs_diff_eq!(p[0], 0.2, epsilon = 1e-8);
        let p = utility_based_price(&b.tree, &b.claims, &LOG, 1.0, &[0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 9.0, epsilon = 1e-8);
        let a = instance_a();
        for (x, q) in [(1.0, 0.0), (1.0, 1.0), (0.5, -1.0)] {
            let p = utility_based_price(&a.tree, &a.claims, &LOG, x, &[q]).unwrap();
            assert_abs_diff_eq!(p[0], THIRD, epsilon = 1e-12);
        }
    }

    #[test]
    fn certainty_equivalent_examples() {
        let b = instance_b();
        let e = certainty_equivalent(&b.tree, &b.claims, &LOG, 1.0, &[1.0]).unwrap();
        assert_abs_diff_eq!(e.value, (16.0f64 / 9.0).cbrt() - 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(e.per_unit.unwrap(), e.value, epsilon = 1e-15);
        assert!(e.residual <= CE_TOL);
        let e = certainty_equivalent(&b.tree, &b.claims, &LOG, 1.0, &[0.0]).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.per_unit.is_none());
        let a = instance_a();
        let e = certainty_equivalent(&a.tree, &a.claims, &LOG, 1.0, &[1.0]).unwrap();
        assert_abs_diff_eq!(e.value, THIRD, epsilon = 1e-8);
        let e = certainty_equivalent(&a.tree, &a.claims, &LOG, 1.0, &[-2.0]).unwrap();
        assert_abs_diff_eq!(e.value, -2.0 * THIRD, epsilon = 1e-8);
    }

    #[test]
    fn consistency_examples() {
        let b = instance_b();
        let c = consistency_check(&b.tree, &b.claims, &LOG, 1.0, &[1.0]).unwrap();
        assert!(c.passed);
        assert_abs_diff_eq!(c.claims[0].lower, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.claims[0].upper, THIRD, epsilon = 1e-12);
        assert!(consistency_check(&b.tree, &b.claims, &LOG, 1.0, &[0.0]).unwrap().passed);
        let a = instance_a();
        let c = consistency_check(&a.tree, &a.claims, &LOG, 1.0, &[1.0]).unwrap();
        assert!(c.passed && c.claims[0].replicable);

        let pricer = Pricer::new(&b.tree, &b.claims, &LOG).unwrap();
        assert!(!pricer.consistency_of(&[0.4]).unwrap().passed);
        assert!(!pricer.consistency_of(&[THIRD]).unwrap().passed);
    }

    #[test]
    fn consistency_with_dependent_claims() {
        let b = instance_b();
        let m = b
            .with_claims(vec![
                Claim::new("call", vec![1.0, 0.0, 0.0]),
                Claim::new("stock", vec![2.0, 1.0, 0.5]),
                Claim::new("two calls", vec![2.0, 0.0, 0.0]),
            ])
            .unwrap();
        let pricer = Pricer::new(&m.tree, &m.claims, &LOG).unwrap();
        let p = pricer.utility_based_price(1.0, &[1.0, 0.5, 0.0]).unwrap();
        assert_abs_diff_eq!(p[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 2.0 * p[0], epsilon = 1e-12);
        let c = pricer.consistency_of(&p).unwrap();
        assert!(c.passed, "{c:?}");
        assert!(c.claims[1].replicable && !c.claims[2].replicable);
    }

    #[test]
    fn zero_claim_prices_at_zero() {
        let b = instance_b();
        let m = b.with_claims(vec![Claim::new("zero", vec![0.0; 3])]).unwrap();
        let pricer = Pricer::new(&m.tree, &m.claims, &LOG).unwrap();
        let r = pricer.report(1.0, &[1.0]).unwrap();
        assert_eq!(r.utility_price, vec![0.0]);
        assert_abs_diff_eq!(r.certainty_equivalent.value, 0.0, epsilon = 1e-9);
        assert!(r.consistency.passed);
    }

    #[test]
    fn probe_examples() {
        let b = instance_b();
        for q in [1.0, 0.0] {
            let p = differentiability_probe(&b.tree, &b.claims, &LOG, 1.0, &[q]).unwrap();
            assert!(p.unique_price, "{p:?}");
        }
        let a = instance_a();
        let p = differentiability_probe(&a.tree, &a.claims, &LOG, 1.0, &[1.0]).unwrap();
        assert!(p.unique_price);
        // u(x, q) = ln(x + q/3) + const: derivatives 3/4 and 1/4 at (1, 1)
        assert_abs_diff_eq!(p.right[0], 0.75, epsilon = 1e-4);
        assert_abs_diff_eq!(p.right[1], 0.25, epsilon = 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn log_prices_are_homothetic(x in 0.5f64..2.0, q in -0.5f64..1.5, c in 0.2f64..5.0) {
            let b = instance_b();
            let pricer = Pricer::new(&b.tree, &b.claims, &LOG).unwrap();
            prop_assume!(pricer.solver().geometry().in_k(&b.claims, x, &[q]).unwrap().member);
            let p = pricer.utility_based_price(x, &[q]).unwrap();
            let pc = pricer.utility_based_price(c * x, &[c * q]).unwrap();
            prop_assert!((p[0] - pc[0]).abs() <= 1e-8);
        }

        #[test]
        fn positive_claims_have_positive_values(x in 0.5f64..2.0, q in 0.05f64..2.0, gamma in 0.1f64..0.9) {
            let b = instance_b();
            let u = UtilitySpec::Power { gamma };
            let pricer = Pricer::new(&b.tree, &b.claims, &u).unwrap();
            let e = pricer.certainty_equivalent(x, &[q]).unwrap();
            prop_assert!(e.value > 0.0);
            prop_assert!(pricer.utility_based_price(x, &[q]).unwrap()[0] > 0.0);
        }

        #[test]
        fn marginal_prices_are_arbitrage_free(x in 0.2f64..4.0, gamma in 0.1f64..0.9) {
            let b = instance_b();
            let u = UtilitySpec::Power { gamma };
            let pricer = Pricer::new(&b.tree, &b.claims, &u).unwrap();
            prop_assert!(pricer.consistency_check(x, &[0.0]).unwrap().passed);
        }
    }
}
