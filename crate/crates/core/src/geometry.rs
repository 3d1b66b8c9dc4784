//! Martingale-measure polytope and the LP oracles built on it.
//!
//! On a finite tree every nonnegative wealth process is a true martingale
//! under every equivalent martingale measure, so the superreplication price of
//! a payoff `g` is `sup_Q E_Q[g]` over the closed polytope, attained at a
//! vertex, and its LP dual is the cheapest dominating hedge. Open sets (the
//! cone of admissible positions, the price set, the dual cone) are tested
//! through max-min-slack programs with a `1e-10` margin; boundary points are
//! classified as outside.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_len, EndowError, Result};
use crate::linprog::{solve_lp, LinearProgram, LpStatus, Relation, Sense};
use crate::market::{combined_payoff, expectation, Claim, ScenarioTree, Strategy};

/// Minimal max-min slack certifying strict positivity.
pub const INTERIOR_MARGIN: f64 = 1e-10;
/// `|alpha(g) + alpha(-g)| <= REPLICATION_TOL (1 + |alpha(g)|)`.
pub const REPLICATION_TOL: f64 = 1e-9;

/// Equality rows over leaf probabilities `q`: one increment row per
/// (non-terminal node, asset) with right-hand side 0, then the mass row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleSystem {
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl MartingaleSystem {
    pub fn residual(&self, q: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| (row.iter().zip(q).map(|(a, v)| a * v).sum::<f64>() - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn martingale_system(tree: &ScenarioTree) -> MartingaleSystem {
    let g = tree.gains_matrix();
    let dim = tree.strategy_dim();
    let mut rows: Vec<Vec<f64>> = (0..dim).map(|j| g.iter().map(|row| row[j]).collect()).collect();
    let mut rhs = vec![0.0; dim];
    rows.push(vec![1.0; tree.leaf_count()]);
    rhs.push(1.0);
    MartingaleSystem { rows, rhs }
}

/// A martingale measure on the leaves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureDensity {
    /// `Q[leaf]`.
    pub q: Vec<f64>,
    /// `dQ/dP` per leaf.
    pub density: Vec<f64>,
    pub strictly_positive: bool,
    pub min_entry: f64,
}

impl MeasureDensity {
    fn from_q(tree: &ScenarioTree, q: Vec<f64>) -> Self {
        let p = tree.leaf_measure();
        let density: Vec<f64> = q.iter().zip(&p).map(|(a, b)| a / b).collect();
        let min_entry = density.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            q,
            density,
            strictly_positive: min_entry > INTERIOR_MARGIN,
            min_entry,
        }
    }

    pub fn expectation(&self, values: &[f64]) -> f64 {
        expectation(&self.q, values)
    }
}

fn base_lp(tree: &ScenarioTree, objective: Vec<f64>, sense: Sense) -> LinearProgram {
    let sys = martingale_system(tree);
    let n = objective.len();
    let mut lp = LinearProgram::new(sense, objective);
    for (row, b) in sys.rows.into_iter().zip(sys.rhs) {
        let mut r = row;
        r.resize(n, 0.0);
        lp.add_row(r, Relation::Eq, b);
    }
    lp
}

/// `max t` over martingale measures with `Q[leaf] >= t` and the extra equality rows.
fn max_min_slack(tree: &ScenarioTree, extra: &[(Vec<f64>, f64)]) -> Result<(f64, Vec<f64>)> {
    let l = tree.leaf_count();
    let mut obj = vec![0.0; l + 1];
    obj[l] = 1.0;
    let mut lp = base_lp(tree, obj, Sense::Maximize);
    lp.set_bounds(l, 0.0, 1.0);
    for k in 0..l {
        let mut row = vec![0.0; l + 1];
        row[k] = 1.0;
        row[l] = -1.0;
        lp.add_row(row, Relation::Ge, 0.0);
    }
    for (coeffs, b) in extra {
        let mut row = coeffs.clone();
        row.push(0.0);
        lp.add_row(row, Relation::Eq, *b);
    }
    let s = solve_lp(&lp)?;
    match s.status {
        LpStatus::Optimal => Ok((s.x[l], s.x[..l].to_vec())),
        LpStatus::Infeasible => Ok((f64::NEG_INFINITY, vec![])),
        other => Err(EndowError::Lp(format!("max-min slack: {other:?}"))),
    }
}

/// Interior martingale measure maximizing the smallest leaf probability.
pub fn find_emm(tree: &ScenarioTree) -> Result<MeasureDensity> {
    let (t, q) = max_min_slack(tree, &[])?;
    if t <= INTERIOR_MARGIN {
        return Err(EndowError::NoEmm { margin: t });
    }
    Ok(MeasureDensity::from_q(tree, q))
}

/// Self-financing strategy with nonnegative, somewhere positive gains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Arbitrage {
    pub strategy: Strategy,
    pub gains: Vec<f64>,
}

/// `max sum gains(H)` over `0 <= gains(H) <= 1`; positive exactly when no
/// interior martingale measure exists.
pub fn find_arbitrage(tree: &ScenarioTree) -> Result<Option<Arbitrage>> {
    let dim = tree.strategy_dim();
    let gm = tree.gains_matrix();
    let mut obj = vec![0.0; dim];
    for row in gm {
        for (o, a) in obj.iter_mut().zip(row) {
            *o += a;
        }
    }
    let mut lp = LinearProgram::new(Sense::Maximize, obj);
    for v in 0..dim {
        lp.set_free(v);
    }
    for row in gm {
        lp.add_row(row.clone(), Relation::Ge, 0.0);
        lp.add_row(row.clone(), Relation::Le, 1.0);
    }
    let s = solve_lp(&lp)?.into_optimal("arbitrage search")?;
    if s.value <= INTERIOR_MARGIN {
        return Ok(None);
    }
    Ok(Some(Arbitrage {
        strategy: Strategy::from_flat(tree, &s.x)?,
        gains: tree.gains_flat(&s.x),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Superreplication {
    /// `alpha(g) = sup_Q E_Q[g]`, also the initial capital of the hedge.
    pub price: f64,
    /// Holdings of the cheapest acceptable strategy with `price + gains >= g`.
    pub strategy: Strategy,
    /// A maximizing measure (a vertex of the closed polytope).
    pub measure: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replication {
    pub replicable: bool,
    /// `alpha(g)`; the unique price when replicable.
    pub cost: f64,
    /// `-alpha(-g)`.
    pub lower: f64,
    pub strategy: Option<Strategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceMembership {
    pub member: bool,
    /// Optimal max-min slack; `-inf` when no measure prices the claims at `p`.
    pub margin: f64,
    /// Witness measure `Q[leaf]` with `E_Q[f] = p`, when one exists.
    pub witness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeMembership {
    pub member: bool,
    /// `beta(-q)`: least capital that dominates `-<q, f>`.
    pub min_capital: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpennessReport {
    /// Whether the dual cone is open, i.e. no nonzero position is replicable.
    pub l_open: bool,
    pub replicable_direction: Option<Vec<f64>>,
}

/// Decomposition `f_i = sum_j coefficients[i][j] f'_j + r_i` with every `r_i`
/// replicable at `residual_cost[i]` by `residual_strategy[i]`, and no nonzero
/// combination of the kept claims `f'` replicable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndowmentReduction {
    pub kept: Vec<usize>,
    pub reduced: Vec<Claim>,
    pub coefficients: Vec<Vec<f64>>,
    pub residual_cost: Vec<f64>,
    pub residual_strategy: Vec<Vec<f64>>,
    pub strategy_dim: usize,
}

impl EndowmentReduction {
    pub fn is_identity(&self) -> bool {
        self.kept.len() == self.coefficients.len()
    }

    /// Replicable claim indices.
    pub fn dropped(&self) -> Vec<usize> {
        (0..self.coefficients.len()).filter(|i| !self.kept.contains(i)).collect()
    }

    /// Position in the reduced claims plus the cash and strategy it carries:
    /// `<q, f> = <q', f'> + <q, pi> + gains(shift)`.
    pub fn reduce_position(&self, q: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
        let n_red = self.kept.len();
        let dim = self.strategy_dim;
        let mut q_red = vec![0.0; n_red];
        let mut cash = 0.0;
        let mut shift = vec![0.0; dim];
        for (i, &qi) in q.iter().enumerate() {
            for j in 0..n_red {
                q_red[j] += qi * self.coefficients[i][j];
            }
            cash += qi * self.residual_cost[i];
            for (s, h) in shift.iter_mut().zip(&self.residual_strategy[i]) {
                *s += qi * h;
            }
        }
        (q_red, cash, shift)
    }

    /// Dual point for the original claims from one for the reduced claims:
    /// `r_i = y pi_i + sum_j c_ij r'_j`.
    pub fn expand_dual(&self, y: f64, r_red: &[f64]) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&self.residual_cost)
            .map(|(c, pi)| y * pi + c.iter().zip(r_red).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Prices for the original claims from prices of the reduced claims.
    pub fn expand_price(&self, p_red: &[f64]) -> Vec<f64> {
        self.expand_dual(1.0, p_red)
    }
}

/// LP oracles over a market known to admit an equivalent martingale measure.
#[derive(Debug, Clone)]
pub struct Geometry<'a> {
    tree: &'a ScenarioTree,
    emm: MeasureDensity,
}

impl<'a> Geometry<'a> {
    pub fn new(tree: &'a ScenarioTree) -> Result<Self> {
        let emm = find_emm(tree)?;
        Ok(Self { tree, emm })
    }

    pub fn tree(&self) -> &ScenarioTree {
        self.tree
    }

    pub fn emm(&self) -> &MeasureDensity {
        &self.emm
    }

    pub fn superreplicate(&self, g: &[f64]) -> Result<Superreplication> {
        check_len("payoff", self.tree.leaf_count(), g.len())?;
        let lp = base_lp(self.tree, g.to_vec(), Sense::Maximize);
        let s = solve_lp(&lp)?.into_optimal("superreplication")?;
        let dim = self.tree.strategy_dim();
        let hedge = s.duals[..dim].to_vec();
        let capital = s.duals[dim];
        // dual feasibility of the LP is exactly domination by the hedge
        let wealth = self.tree.gains_flat(&hedge);
        let scale = 1.0 + g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let shortfall = wealth
            .iter()
            .zip(g)
            .map(|(w, gv)| gv - capital - w)
            .fold(f64::NEG_INFINITY, f64::max);
        if shortfall > 1e-8 * scale || (capital - s.value).abs() > 1e-8 * scale {
            return Err(EndowError::CertificateFailure(format!(
                "superreplication hedge falls short by {shortfall:e}"
            )));
        }
        Ok(Superreplication {
            price: s.value,
            strategy: Strategy::from_flat(self.tree, &hedge)?,
            measure: s.x,
        })
    }

    pub fn superreplication_price(&self, g: &[f64]) -> Result<f64> {
        Ok(self.superreplicate(g)?.price)
    }

    /// `beta(q) = alpha(<q, f>)`.
    pub fn support_beta(&self, claims: &[Claim], q: &[f64]) -> Result<f64> {
        let g = combined_payoff(claims, q, self.tree.leaf_count())?;
        self.superreplication_price(&g)
    }

    /// Superreplication interval `(-alpha(-f), alpha(f))` of one claim.
    pub fn price_bounds(&self, claim: &Claim) -> Result<(f64, f64)> {
        let neg: Vec<f64> = claim.payoff.iter().map(|v| -v).collect();
        Ok((-self.superreplication_price(&neg)?, self.superreplication_price(&claim.payoff)?))
    }

    pub fn in_price_set(&self, claims: &[Claim], p: &[f64]) -> Result<PriceMembership> {
        check_len("price vector", claims.len(), p.len())?;
        let extra: Vec<(Vec<f64>, f64)> = claims
            .iter()
            .zip(p)
            .map(|(c, &pi)| (c.payoff.clone(), pi))
            .collect();
        for (c, _) in &extra {
            check_len("claim payoff", self.tree.leaf_count(), c.len())?;
        }
        let (t, q) = max_min_slack(self.tree, &extra)?;
        Ok(PriceMembership {
            member: t > INTERIOR_MARGIN,
            margin: t,
            witness: if t.is_finite() { Some(q) } else { None },
        })
    }

    pub fn is_replicable(&self, g: &[f64]) -> Result<Replication> {
        let up = self.superreplicate(g)?;
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let down = self.superreplication_price(&neg)?;
        let replicable = (up.price + down).abs() <= REPLICATION_TOL * (1.0 + up.price.abs());
        Ok(Replication {
            replicable,
            cost: up.price,
            lower: -down,
            strategy: replicable.then_some(up.strategy),
        })
    }

    /// Nonnegative wealth dominating `sum_i |f_i|`, at least cost.
    pub fn dominating_wealth(&self, claims: &[Claim]) -> Result<Superreplication> {
        let mut g = vec![0.0; self.tree.leaf_count()];
        for c in claims {
            check_len("claim payoff", g.len(), c.payoff.len())?;
            for (a, f) in g.iter_mut().zip(&c.payoff) {
                *a += f.abs();
            }
        }
        self.superreplicate(&g)
    }

    pub fn in_closure_k(&self, claims: &[Claim], x: f64, q: &[f64]) -> Result<ConeMembership> {
        let neg: Vec<f64> = q.iter().map(|v| -v).collect();
        let beta = self.support_beta(claims, &neg)?;
        let tol = 1e-12 * (1.0 + x.abs() + beta.abs());
        Ok(ConeMembership {
            member: x >= beta - tol,
            min_capital: beta,
            margin: x - beta,
        })
    }

    pub fn in_k(&self, claims: &[Claim], x: f64, q: &[f64]) -> Result<ConeMembership> {
        let neg: Vec<f64> = q.iter().map(|v| -v).collect();
        let beta = self.support_beta(claims, &neg)?;
        let mut abs_payoff = vec![0.0; self.tree.leaf_count()];
        for (c, qi) in claims.iter().zip(q) {
            for (a, f) in abs_payoff.iter_mut().zip(&c.payoff) {
                *a += (qi * f).abs();
            }
        }
        let scale = self.superreplication_price(&abs_payoff)?;
        let eps = 1e-9 * (1.0 + x.abs() + scale);
        Ok(ConeMembership {
            member: x > beta + eps,
            min_capital: beta,
            margin: x - beta,
        })
    }

    pub fn in_l(&self, claims: &[Claim], y: f64, r: &[f64]) -> Result<PriceMembership> {
        if !(y > 0.0) {
            return Ok(PriceMembership {
                member: false,
                margin: f64::NEG_INFINITY,
                witness: None,
            });
        }
        let p: Vec<f64> = r.iter().map(|v| v / y).collect();
        self.in_price_set(claims, &p)
    }

    pub fn reduce_endowments(&self, claims: &[Claim]) -> Result<EndowmentReduction> {
        let l = self.tree.leaf_count();
        let dim = self.tree.strategy_dim();
        let gains = self.tree.gains_matrix();
        let mut kept: Vec<usize> = Vec::new();
        let mut coefficients = Vec::with_capacity(claims.len());
        let mut residual_cost = Vec::with_capacity(claims.len());
        let mut residual_strategy = Vec::with_capacity(claims.len());

        for (i, claim) in claims.iter().enumerate() {
            check_len("claim payoff", l, claim.payoff.len())?;
            let k = kept.len();
            // variables: c (k), x1, h1 (dim), x2, h2 (dim); all free
            let nv = k + 2 + 2 * dim;
            let mut obj = vec![0.0; nv];
            obj[k] = 1.0;
            obj[k + 1 + dim] = 1.0;
            let mut lp = LinearProgram::new(Sense::Minimize, obj);
            for v in 0..nv {
                lp.set_free(v);
            }
            for leaf in 0..l {
                // x1 + G h1 + F' c >= f_i
                let mut up = vec![0.0; nv];
                // x2 + G h2 - F' c >= -f_i
                let mut down = vec![0.0; nv];
                for (j, &kj) in kept.iter().enumerate() {
                    up[j] = claims[kj].payoff[leaf];
                    down[j] = -claims[kj].payoff[leaf];
                }
                up[k] = 1.0;
                down[k + 1 + dim] = 1.0;
                for d in 0..dim {
                    up[k + 1 + d] = gains[leaf][d];
                    down[k + 2 + dim + d] = gains[leaf][d];
                }
                lp.add_row(up, Relation::Ge, claim.payoff[leaf]);
                lp.add_row(down, Relation::Ge, -claim.payoff[leaf]);
            }
            let s = solve_lp(&lp)?.into_optimal("endowment reduction")?;
            let scale = 1.0 + claim.payoff.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let mut coeff = vec![0.0; claims.len()];
            if s.value <= REPLICATION_TOL * scale {
                let c = &s.x[..k];
                let residual: Vec<f64> = (0..l)
                    .map(|leaf| {
                        claim.payoff[leaf]
                            - kept.iter().zip(c).map(|(&kj, cj)| claims[kj].payoff[leaf] * cj).sum::<f64>()
                    })
                    .collect();
                let rep = self.is_replicable(&residual)?;
                if !rep.replicable {
                    return Err(EndowError::CertificateFailure(format!(
                        "claim {} residual not replicable: spread {:e}",
                        claim.name,
                        rep.cost - rep.lower
                    )));
                }
                for (j, &kj) in kept.iter().enumerate() {
                    coeff[kj] = c[j];
                }
                coefficients.push(coeff);
                residual_cost.push(rep.cost);
                residual_strategy.push(rep.strategy.map(|s| s.flatten()).unwrap_or_else(|| vec![0.0; dim]));
            } else {
                coeff[i] = 1.0;
                kept.push(i);
                coefficients.push(coeff);
                residual_cost.push(0.0);
                residual_strategy.push(vec![0.0; dim]);
            }
        }
        // compress coefficient columns to the kept claims
        let coefficients = coefficients
            .into_iter()
            .map(|row| kept.iter().map(|&kj| row[kj]).collect())
            .collect();
        Ok(EndowmentReduction {
            reduced: kept.iter().map(|&i| claims[i].clone()).collect(),
            kept,
            coefficients,
            residual_cost,
            residual_strategy,
            strategy_dim: dim,
        })
    }

    pub fn lemma7_report(&self, claims: &[Claim]) -> Result<OpennessReport> {
        let red = self.reduce_endowments(claims)?;
        let direction = red.dropped().first().map(|&i| {
            let mut q = vec![0.0; claims.len()];
            q[i] = 1.0;
            for (j, &kj) in red.kept.iter().enumerate() {
                q[kj] -= red.coefficients[i][j];
            }
            q
        });
        Ok(OpennessReport {
            l_open: direction.is_none(),
            replicable_direction: direction,
        })
    }

    /// Random strictly positive martingale measures: convex combinations of the
    /// interior measure with LP vertices of the closed polytope.
    pub fn sample_measures(&self, count: usize, seed: u64) -> Result<Vec<MeasureDensity>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = self.tree.leaf_count();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let obj: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = solve_lp(&base_lp(self.tree, obj, Sense::Maximize))?.into_optimal("measure sampling")?;
            let w = rng.random_range(0.05..0.95);
            let q: Vec<f64> = self
                .emm
                .q
                .iter()
                .zip(&s.x)
                .map(|(a, v)| (1.0 - w) * a + w * v.max(0.0))
                .collect();
            out.push(MeasureDensity::from_q(self.tree, q));
        }
        Ok(out)
    }
}

pub fn superreplication_price(tree: &ScenarioTree, g: &[f64]) -> Result<Superreplication> {
    Geometry::new(tree)?.superreplicate(g)
}

pub fn support_beta(tree: &ScenarioTree, claims: &[Claim], q: &[f64]) -> Result<f64> {
    Geometry::new(tree)?.support_beta(claims, q)
}

pub fn in_price_set(tree: &ScenarioTree, claims: &[Claim], p: &[f64]) -> Result<PriceMembership> {
    Geometry::new(tree)?.in_price_set(claims, p)
}

pub fn is_replicable(tree: &ScenarioTree, g: &[f64]) -> Result<Replication> {
    Geometry::new(tree)?.is_replicable(g)
}

pub fn dominating_wealth(tree: &ScenarioTree, claims: &[Claim]) -> Result<Superreplication> {
    Geometry::new(tree)?.dominating_wealth(claims)
}

pub fn in_closure_k(tree: &ScenarioTree, claims: &[Claim], x: f64, q: &[f64]) -> Result<ConeMembership> {
    Geometry::new(tree)?.in_closure_k(claims, x, q)
}

pub fn in_k(tree: &ScenarioTree, claims: &[Claim], x: f64, q: &[f64]) -> Result<ConeMembership> {
    Geometry::new(tree)?.in_k(claims, x, q)
}

pub fn in_l(tree: &ScenarioTree, claims: &[Claim], y: f64, r: &[f64]) -> Result<PriceMembership> {
    Geometry::new(tree)?.in_l(claims, y, r)
}

pub fn lemma7_report(tree: &ScenarioTree, claims: &[Claim]) -> Result<OpennessReport> {
    Geometry::new(tree)?.lemma7_report(claims)
}

pub fn reduce_endowments(tree: &ScenarioTree, claims: &[Claim]) -> Result<EndowmentReduction> {
    Geometry::new(tree)?.reduce_endowments(claims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{instance_a, instance_b, Market, NodeRecord};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use super::Strategy;

    const THIRD: f64 = 1.0 / 3.0;

    #[test]
    fn martingale_rows_for_fixtures() {
        let a = instance_a();
        let sys = martingale_system(&a.tree);
        assert_eq!(sys.rows, vec![vec![1.0, -0.5], vec![1.0, 1.0]]);
        assert!(sys.residual(&[THIRD, 2.0 * THIRD]) < 1e-15);
        // zero vector violates the mass row only
        assert_eq!(sys.residual(&[0.0, 0.0]), 1.0);

        let b = instance_b();
        let sys = martingale_system(&b.tree);
        assert_eq!(sys.rows, vec![vec![1.0, 0.0, -0.5], vec![1.0, 1.0, 1.0]]);
        assert!(sys.residual(&[0.25, 0.25, 0.5]) < 1e-15);
    }

    #[test]
    fn find_emm_examples() {
        let a = find_emm(&instance_a().tree).unwrap();
        assert_abs_diff_eq!(a.q[0], THIRD, epsilon = 1e-12);
        assert_abs_diff_eq!(a.q[1], 2.0 * THIRD, epsilon = 1e-12);
        assert_abs_diff_eq!(a.density[0], 2.0 * THIRD, epsilon = 1e-12);
        assert!(a.strictly_positive);

        let b = find_emm(&instance_b().tree).unwrap();
        for (got, want) in b.q.iter().zip([0.25, 0.25, 0.5]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn arbitrage_market_has_no_emm() {
        let m = Market::new(
            vec!["S".into()],
            vec![
                NodeRecord::new("root", None, 1.0, vec![1.0]),
                NodeRecord::new("up", Some("root"), 0.5, vec![2.0]),
                NodeRecord::new("down", Some("root"), 0.5, vec![1.5]),
            ],
            vec![],
        )
        .unwrap();
        assert!(matches!(find_emm(&m.tree), Err(EndowError::NoEmm { .. })));
        let arb = find_arbitrage(&m.tree).unwrap().unwrap();
        assert!(arb.gains.iter().all(|g| *g >= -1e-12));
        assert!(arb.gains.iter().any(|g| *g > 1e-9));
        assert!(arb.strategy.holdings[0][0] > 0.0);
        assert!(find_arbitrage(&instance_b().tree).unwrap().is_none());
        assert!(find_arbitrage(&instance_a().tree).unwrap().is_none());
        assert!(matches!(
            superreplication_price(&m.tree, &[1.0, 0.0]),
            Err(EndowError::NoEmm { .. })
        ));
    }

    #[test]
    fn superreplication_examples() {
        let b = instance_b();
        let s = superreplication_price(&b.tree, &[1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s.price, THIRD, epsilon = 1e-12);
        assert_abs_diff_eq!(s.strategy.holdings[0][0], 2.0 * THIRD, epsilon = 1e-12);
        let s = superreplication_price(&b.tree, &[-1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s.price, 0.0, epsilon = 1e-12);

        let a = instance_a();
        let s = superreplication_price(&a.tree, &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s.price, THIRD, epsilon = 1e-12);
        assert_abs_diff_eq!(s.strategy.holdings[0][0], 2.0 * THIRD, epsilon = 1e-12);
    }

    #[test]
    fn support_function_examples() {
        let b = instance_b();
        assert_abs_diff_eq!(support_beta(&b.tree, &b.claims, &[1.0]).unwrap(), THIRD, epsilon = 1e-12);
        assert_abs_diff_eq!(support_beta(&b.tree, &b.claims, &[-1.0]).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(support_beta(&b.tree, &b.claims, &[0.0]).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn price_set_examples() {
        let b = instance_b();
        let m = in_price_set(&b.tree, &b.claims, &[0.2]).unwrap();
        assert!(m.member);
        let w = m.witness.unwrap();
        for (got, want) in w.iter().zip([0.2, 0.4, 0.4]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert!(!in_price_set(&b.tree, &b.claims, &[THIRD]).unwrap().member);
        let out = in_price_set(&b.tree, &b.claims, &[0.5]).unwrap();
        assert!(!out.member);
        assert!(out.witness.is_none());
    }

    #[test]
    fn replicability_examples() {
        let a = instance_a();
        let r = is_replicable(&a.tree, &[1.0, 0.0]).unwrap();
        assert!(r.replicable);
        assert_abs_diff_eq!(r.cost, THIRD, epsilon = 1e-12);
        assert_abs_diff_eq!(r.strategy.unwrap().holdings[0][0], 2.0 * THIRD, epsilon = 1e-12);

        let b = instance_b();
        let r = is_replicable(&b.tree, &[1.0, 0.0, 0.0]).unwrap();
        assert!(!r.replicable);
        assert_abs_diff_eq!(r.lower, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.cost, THIRD, epsilon = 1e-12);

        let r = is_replicable(&b.tree, &[2.5, 2.5, 2.5]).unwrap();
        assert!(r.replicable);
        assert_abs_diff_eq!(r.cost, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.strategy.unwrap().holdings[0][0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dominating_wealth_examples() {
        let b = instance_b();
        let d = dominating_wealth(&b.tree, &b.claims).unwrap();
        assert_abs_diff_eq!(d.price, THIRD, epsilon = 1e-12);
        let w = b.tree.terminal_wealth(&d.strategy, d.price).unwrap();
        assert!(w.value.iter().zip([1.0, 0.0, 0.0]).all(|(w, f)| *w >= f - 1e-12));

        let zero = b.with_claims(vec![Claim::new("zero", vec![0.0; 3])]).unwrap();
        let d = dominating_wealth(&zero.tree, &zero.claims).unwrap();
        assert_abs_diff_eq!(d.price, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.strategy.holdings[0][0], 0.0, epsilon = 1e-12);

        let a = instance_a();
        let d = dominating_wealth(&a.tree, &a.claims).unwrap();
        assert_abs_diff_eq!(d.price, THIRD, epsilon = 1e-12);
        assert_abs_diff_eq!(d.strategy.holdings[0][0], 2.0 * THIRD, epsilon = 1e-12);
    }

    #[test]
    fn cone_membership_examples() {
        let b = instance_b();
        let c = &b.claims;
        assert!(in_closure_k(&b.tree, c, THIRD, &[-1.0]).unwrap().member);
        assert!(!in_closure_k(&b.tree, c, 0.1, &[-1.0]).unwrap().member);
        assert!(in_closure_k(&b.tree, c, 0.0, &[0.0]).unwrap().member);
        assert!(in_closure_k(&b.tree, c, 2.0, &[0.0]).unwrap().member);

        assert!(in_k(&b.tree, c, 1.0, &[1.0]).unwrap().member);
        assert!(!in_k(&b.tree, c, THIRD, &[-1.0]).unwrap().member);
        assert!(in_k(&b.tree, c, 1.0, &[0.0]).unwrap().member);
        assert!(!in_k(&b.tree, c, 0.0, &[0.0]).unwrap().member);
    }

    #[test]
    fn dual_cone_examples() {
        let b = instance_b();
        let c = &b.claims;
        assert!(in_l(&b.tree, c, 1.0, &[0.2]).unwrap().member);
        assert!(!in_l(&b.tree, c, 1.0, &[0.5]).unwrap().member);
        assert!(in_l(&b.tree, c, 5.0 / 6.0, &[1.0 / 6.0]).unwrap().member);
        assert!(!in_l(&b.tree, c, 0.0, &[0.0]).unwrap().member);
    }

    #[test]
    fn openness_examples() {
        let b = instance_b();
        let r = lemma7_report(&b.tree, &b.claims).unwrap();
        assert!(r.l_open);
        let a = instance_a();
        let r = lemma7_report(&a.tree, &a.claims).unwrap();
        assert!(!r.l_open);
        assert_eq!(r.replicable_direction.unwrap().len(), 1);
        assert!(lemma7_report(&b.tree, &[]).unwrap().l_open);
    }

    #[test]
    fn reduction_examples() {
        let a = instance_a();
        let r = reduce_endowments(&a.tree, &a.claims).unwrap();
        assert!(r.kept.is_empty());
        assert_abs_diff_eq!(r.residual_cost[0], THIRD, epsilon = 1e-12);

        let b = instance_b();
        let r = reduce_endowments(&b.tree, &b.claims).unwrap();
        assert_eq!(r.kept, vec![0]);
        assert!(r.is_identity());
        assert_eq!(r.coefficients, vec![vec![1.0]]);

        let two = b
            .with_claims(vec![
                Claim::new("f", vec![1.0, 0.0, 0.0]),
                Claim::new("2f", vec![2.0, 0.0, 0.0]),
            ])
            .unwrap();
        let r = reduce_endowments(&two.tree, &two.claims).unwrap();
        assert_eq!(r.kept, vec![0]);
        assert_abs_diff_eq!(r.coefficients[1][0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.residual_cost[1], 0.0, epsilon = 1e-9);
        let l7 = lemma7_report(&two.tree, &two.claims).unwrap();
        let d = l7.replicable_direction.unwrap();
        assert_abs_diff_eq!(d[0], -2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn reduction_with_stock_component() {
        // f2 = f1 + S_T: replicable residual S_T costs S_0 = 1
        let b = instance_b();
        let m = b
            .with_claims(vec![
                Claim::new("f", vec![1.0, 0.0, 0.0]),
                Claim::new("f+S", vec![3.0, 1.0, 0.5]),
                Claim::new("zero", vec![0.0; 3]),
            ])
            .unwrap();
        let r = reduce_endowments(&m.tree, &m.claims).unwrap();
        assert_eq!(r.kept, vec![0]);
        assert_abs_diff_eq!(r.coefficients[1][0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.residual_cost[1], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.residual_strategy[1][0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.residual_cost[2], 0.0, epsilon = 1e-12);
        let (q_red, cash, shift) = r.reduce_position(&[1.0, 2.0, 5.0]);
        assert_abs_diff_eq!(q_red[0], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(cash, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(shift[0], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn martingale_equality_for_random_strategies() {
        let b = instance_b();
        let geo = Geometry::new(&b.tree).unwrap();
        let measures = geo.sample_measures(10, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let h = Strategy::constant(&b.tree, &[rng.random_range(-5.0..5.0)]).unwrap();
            let x0 = rng.random_range(-2.0..2.0);
            let w = b.tree.terminal_wealth(&h, x0).unwrap().value;
            for q in &measures {
                assert!(q.strictly_positive);
                assert!((q.expectation(&w) - x0).abs() <= 1e-9);
            }
        }
    }

    fn beta_q(geo: &Geometry, claims: &[Claim], q: &[f64]) -> f64 {
        geo.support_beta(claims, q).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn beta_is_sublinear(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, d in -3.0f64..3.0, lam in 0.0f64..4.0) {
            let m = instance_b().with_claims(vec![
                Claim::new("call", vec![1.0, 0.0, 0.0]),
                Claim::new("put", vec![0.0, 0.0, 0.5]),
            ]).unwrap();
            let geo = Geometry::new(&m.tree).unwrap();
            let s = beta_q(&geo, &m.claims, &[a + c, b + d]);
            let s1 = beta_q(&geo, &m.claims, &[a, b]);
            let s2 = beta_q(&geo, &m.claims, &[c, d]);
            prop_assert!(s <= s1 + s2 + 1e-9);
            let sl = beta_q(&geo, &m.claims, &[lam * a, lam * b]);
            prop_assert!((sl - lam * s1).abs() <= 1e-9 * (1.0 + sl.abs()));
        }

        #[test]
        fn price_interval_matches_superreplication(p in -0.2f64..0.6) {
            let b = instance_b();
            let geo = Geometry::new(&b.tree).unwrap();
            let (lo, hi) = geo.price_bounds(&b.claims[0]).unwrap();
            let member = geo.in_price_set(&b.claims, &[p]).unwrap();
            if p > lo + 1e-8 && p < hi - 1e-8 {
                prop_assert!(member.member);
                let w = member.witness.unwrap();
                prop_assert!((expectation(&w, &b.claims[0].payoff) - p).abs() < 1e-9);
                prop_assert!(w.iter().all(|v| *v > 0.0));
            }
            if p < lo - 1e-8 || p > hi + 1e-8 {
                prop_assert!(!member.member);
            }
        }

        #[test]
        fn k_is_a_cone(x in -1.0f64..3.0, q in -3.0f64..3.0, c in 0.1f64..10.0) {
            let b = instance_b();
            let geo = Geometry::new(&b.tree).unwrap();
            if geo.in_k(&b.claims, x, &[q]).unwrap().member {
                prop_assert!(geo.in_k(&b.claims, c * x, &[c * q]).unwrap().member);
            }
        }
    }

    #[test]
    fn price_interval_endpoints() {
        let b = instance_b();
        let geo = Geometry::new(&b.tree).unwrap();
        let (lo, hi) = geo.price_bounds(&b.claims[0]).unwrap();
        assert_abs_diff_eq!(lo, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, THIRD, epsilon = 1e-12);
    }
}
