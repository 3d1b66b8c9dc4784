//! Optimal investment with random endowments on finite scenario-tree markets.
//!
//! The crate solves the expected-utility problem over capital `x` and claim
//! holdings `q`, its dual over terminal deflators, and the pricing objects
//! derived from both: superreplication bounds, arbitrage-free price sets,
//! utility-based (marginal) prices and certainty equivalents.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod linprog;
pub mod market;
pub mod pricing;
pub mod solver;
pub mod utility;

pub use error::{EndowError, Result};
pub use utility::{Utility, UtilitySpec};
pub use market::{instance_a, instance_b, Claim, Market, NodeRecord, Portfolio, ScenarioTree, Strategy};

