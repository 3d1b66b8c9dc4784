//! Seeded random markets.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{EndowError, Result};
use crate::geometry::find_emm;
use crate::market::{Claim, Market, NodeRecord, ScenarioTree};

/// Attempts before the generator gives up on finding an arbitrage-free draw.
pub const REJECTION_BUDGET: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenParams {
    pub seed: u64,
    pub branches: usize,
    pub periods: usize,
    pub assets: usize,
    pub claims: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            seed: 42,
            branches: 3,
            periods: 1,
            assets: 1,
            claims: 1,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if self.branches < 2 || self.periods < 1 || self.assets < 1 {
            return Err(EndowError::InvalidInput(
                "generator needs branches >= 2, periods >= 1, assets >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, p: &GenParams) -> Vec<NodeRecord> {
    let root_prices = vec![1.0; p.assets];
    let mut records = vec![NodeRecord::new("root", None, 1.0, root_prices.clone())];
    let mut frontier = vec![("root".to_string(), root_prices)];
    for _ in 0..p.periods {
        let mut next = Vec::new();
        for (id, prices) in &frontier {
            let weights: Vec<f64> = (0..p.branches).map(|_| rng.random_range(0.05..0.95)).collect();
            let total: f64 = weights.iter().sum();
            for (k, w) in weights.iter().enumerate() {
                let child_prices: Vec<f64> = prices
                    .iter()
                    .map(|s| s * rng.random_range(0.5f64.ln()..2f64.ln()).exp())
                    .collect();
                let child = if id == "root" { k.to_string() } else { format!("{id}.{k}") };
                records.push(NodeRecord::new(child.clone(), Some(id), w / total, child_prices.clone()));
                next.push((child, child_prices));
            }
        }
        frontier = next;
    }
    // exact normalization of each sibling group
    let mut i = 1;
    while i < records.len() {
        let group = &mut records[i..i + p.branches];
        let head: f64 = group[..p.branches - 1].iter().map(|r| r.p).sum();
        group[p.branches - 1].p = 1.0 - head;
        i += p.branches;
    }
    records
}

fn claims_for(tree: &ScenarioTree, rng: &mut ChaCha8Rng, count: usize) -> Vec<Claim> {
    let s = tree.terminal_prices(0);
    let s0 = tree.root_prices()[0];
    (0..count)
        .map(|k| match k % 3 {
            0 => Claim::new(format!("call{k}"), s.iter().map(|v| (v - s0).max(0.0)).collect()),
            1 => Claim::new(format!("put{k}"), s.iter().map(|v| (s0 - v).max(0.0)).collect()),
            _ => Claim::new(format!("random{k}"), s.iter().map(|_| rng.random_range(0.0..1.0)).collect()),
        })
        .collect()
}

/// Whether every node's local increments span `branches - 1` dimensions.
pub fn is_complete(tree: &ScenarioTree) -> bool {
    (0..tree.inner_count()).all(|k| {
        let inc = tree.local_increments(k);
        let rows = inc.len();
        let cols = tree.asset_count();
        let m = DMatrix::from_fn(rows, cols, |i, j| inc[i][j]);
        m.rank(1e-10) == rows - 1
    })
}

pub fn generate_market(params: &GenParams) -> Result<Market> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for attempt in 1..=REJECTION_BUDGET {
        let records = draw(&mut rng, params);
        let tree = ScenarioTree::new(params.assets, records.clone())?;
        let Ok(emm) = find_emm(&tree) else { continue };
        let claims = claims_for(&tree, &mut rng, params.claims);
        let assets = (0..params.assets).map(|a| format!("S{a}")).collect();
        let mut market = Market::new(assets, records, claims)?;
        market.metadata = Some(json!({
            "generator": params,
            "attempts": attempt,
            "complete": is_complete(&market.tree),
            "emm_margin": emm.q.iter().copied().fold(f64::INFINITY, f64::min),
        }));
        return Ok(market);
    }
    Err(EndowError::NonConvergence {
        what: "arbitrage-free market draw",
        iterations: REJECTION_BUDGET,
    })
}

/// Shape of the `i`-th market of a seeded random batch: one or two periods,
/// two to five branches, at most two assets and fewer assets than branches.
pub fn batch_params(seed: u64, index: usize) -> GenParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let periods = rng.random_range(1..=2);
    let branches = rng.random_range(2..=5);
    let assets = rng.random_range(1..=2usize).min(branches - 1);
    GenParams {
        seed: rng.random(),
        branches,
        periods,
        assets,
        claims: rng.random_range(1..=2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_42_is_incomplete_and_deterministic() {
        let p = GenParams::default();
        let m = generate_market(&p).unwrap();
        assert!(m.tree.validate().passed());
        assert!(!is_complete(&m.tree));
        assert_eq!(m.metadata.as_ref().unwrap()["complete"], false);
        assert!(find_emm(&m.tree).is_ok());
        assert_eq!(m.to_json(), generate_market(&p).unwrap().to_json());
    }

    #[test]
    fn two_branches_one_asset_is_complete() {
        let p = GenParams {
            branches: 2,
            periods: 2,
            ..GenParams::default()
        };
        let m = generate_market(&p).unwrap();
        assert!(is_complete(&m.tree));
        assert_eq!(m.metadata.as_ref().unwrap()["complete"], true);
        assert_eq!(m.tree.leaf_count(), 4);
    }

    #[test]
    fn probabilities_stay_bounded() {
        for seed in 0..20 {
            let p = GenParams {
                seed,
                branches: 4,
                periods: 2,
                assets: 2,
                claims: 3,
            };
            let m = generate_market(&p).unwrap();
            for r in m.tree.records().iter().skip(1) {
                assert!(r.p > 0.05 / (0.95 * 4.0) - 1e-12 && r.p < 1.0);
            }
            assert_eq!(m.claims.len(), 3);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        for p in [
            GenParams { branches: 1, ..GenParams::default() },
            GenParams { periods: 0, ..GenParams::default() },
            GenParams { assets: 0, ..GenParams::default() },
        ] {
            assert!(generate_market(&p).is_err());
        }
    }

    #[test]
    fn batch_shapes_respect_limits() {
        for i in 0..200 {
            let p = batch_params(7, i);
            assert!((1..=2).contains(&p.periods));
            assert!(p.branches <= 5 && p.assets <= 2 && p.assets < p.branches);
        }
    }
}
