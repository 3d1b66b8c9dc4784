//! Finite scenario-tree markets: tree structure, claims, strategies and wealth.
//!
//! Leaves and non-terminal nodes are enumerated depth-first, left to right,
//! with children visited in the order their records appear. Every per-leaf
//! vector in the crate uses that leaf order, and every strategy uses that
//! order of non-terminal nodes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, EndowError, Result};

/// Tolerance on sibling and leaf probability sums.
pub const PROBABILITY_TOL: f64 = 1e-12;

/// One node as it appears in a market file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub parent: Option<String>,
    /// Conditional probability of reaching this node from its parent (1 at the root).
    pub p: f64,
    pub prices: Vec<f64>,
}

impl NodeRecord {
    pub fn new(id: impl Into<String>, parent: Option<&str>, p: f64, prices: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            parent: parent.map(str::to_owned),
            p,
            prices,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeCheck {
    pub name: &'static str,
    pub passed: bool,
    pub offending: Vec<String>,
}

/// Pass/fail per structural invariant of a scenario tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeDiagnostics {
    pub checks: Vec<TreeCheck>,
}

impl TreeDiagnostics {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&TreeCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

fn push_check(checks: &mut Vec<TreeCheck>, name: &'static str, offending: Vec<String>) {
    checks.push(TreeCheck {
        name,
        passed: offending.is_empty(),
        offending,
    });
}

/// Structural validation of raw node records. Never fails; reports every
/// violated invariant with the offending node ids.
pub fn validate_tree(asset_count: usize, records: &[NodeRecord]) -> TreeDiagnostics {
    let mut checks = Vec::new();

    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut dup = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.id.is_empty() || index.insert(r.id.as_str(), i).is_some() {
            dup.push(r.id.clone());
        }
    }
    if records.is_empty() {
        dup.push("<empty tree>".into());
    }
    push_check(&mut checks, "identifiers", dup);

    let roots: Vec<String> = records
        .iter()
        .filter(|r| r.parent.is_none())
        .map(|r| r.id.clone())
        .collect();
    push_check(
        &mut checks,
        "root",
        if roots.len() == 1 {
            vec![]
        } else if roots.is_empty() {
            vec!["<no root>".into()]
        } else {
            roots
        },
    );

    let bad_parent: Vec<String> = records
        .iter()
        .filter(|r| matches!(&r.parent, Some(p) if !index.contains_key(p.as_str()) || p == &r.id))
        .map(|r| r.id.clone())
        .collect();

    // levels by walking up to a root; cycles or dangling parents leave None
    let mut levels: Vec<Option<usize>> = vec![None; records.len()];
    let mut cyclic = Vec::new();
    for i in 0..records.len() {
        let mut depth = 0usize;
        let mut cur = i;
        let mut ok = true;
        while let Some(p) = &records[cur].parent {
            match index.get(p.as_str()) {
                Some(&j) => cur = j,
                None => {
                    ok = false;
                    break;
                }
            }
            depth += 1;
            if depth > records.len() {
                ok = false;
                cyclic.push(records[i].id.clone());
                break;
            }
        }
        if ok {
            levels[i] = Some(depth);
        }
    }
    let mut parent_issues = bad_parent;
    parent_issues.extend(cyclic);
    parent_issues.sort();
    parent_issues.dedup();
    push_check(&mut checks, "parent reference", parent_issues);

    let bad_prices: Vec<String> = records
        .iter()
        .filter(|r| r.prices.len() != asset_count || r.prices.iter().any(|v| !v.is_finite()))
        .map(|r| r.id.clone())
        .collect();
    let mut price_issues = bad_prices;
    if asset_count == 0 {
        price_issues.push("<asset count 0>".into());
    }
    push_check(&mut checks, "price dimension", price_issues);

    let bad_range: Vec<String> = records
        .iter()
        .filter(|r| !(r.p.is_finite() && r.p > 0.0 && r.p <= 1.0 + PROBABILITY_TOL))
        .map(|r| r.id.clone())
        .collect();
    push_check(&mut checks, "probability range", bad_range);

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); records.len()];
    for (i, r) in records.iter().enumerate() {
        if let Some(&j) = r.parent.as_deref().and_then(|p| index.get(p)) {
            if j != i {
                children[j].push(i);
            }
        }
    }

    let mut normalization = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.parent.is_none() && (r.p - 1.0).abs() > PROBABILITY_TOL {
            normalization.push(r.id.clone());
        }
        if !children[i].is_empty() {
            let s: f64 = children[i].iter().map(|&c| records[c].p).sum();
            if (s - 1.0).abs() > PROBABILITY_TOL {
                normalization.push(r.id.clone());
            }
        }
    }
    push_check(&mut checks, "probability normalization", normalization);

    let horizon = levels.iter().flatten().copied().max().unwrap_or(0);
    let mut branching = Vec::new();
    if horizon == 0 {
        branching.push("<horizon 0>".into());
    }
    for (i, r) in records.iter().enumerate() {
        if let Some(l) = levels[i] {
            if l < horizon && children[i].len() < 2 {
                branching.push(r.id.clone());
            }
        }
    }
    push_check(&mut checks, "branching", branching);

    // unconditional leaf mass
    let mut mass = 0.0;
    let mut leaf_issue = Vec::new();
    for i in 0..records.len() {
        if levels[i] == Some(horizon) {
            let mut prob = 1.0;
            let mut cur = i;
            loop {
                prob *= records[cur].p;
                match records[cur].parent.as_deref().and_then(|p| index.get(p)) {
                    Some(&j) => cur = j,
                    None => break,
                }
            }
            mass += prob;
        }
    }
    if (mass - 1.0).abs() > PROBABILITY_TOL {
        leaf_issue.push(format!("<leaf mass {mass}>"));
    }
    push_check(&mut checks, "leaf measure", leaf_issue);

    TreeDiagnostics { checks }
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    parent: Option<usize>,
    children: Vec<usize>,
    level: usize,
}

/// A validated finite event tree with per-node asset prices.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    records: Vec<NodeRecord>,
    nodes: Vec<Node>,
    asset_count: usize,
    horizon: usize,
    leaves: Vec<usize>,
    inner: Vec<usize>,
    /// Row per leaf, column per (non-terminal node, asset): the price increment
    /// on the edge leaving that node along the path to the leaf (0 off-path).
    gains: Vec<Vec<f64>>,
    /// Contiguous leaf range below each non-terminal node, in leaf order.
    inner_leaf_range: Vec<(usize, usize)>,
}

impl ScenarioTree {
    pub fn new(asset_count: usize, records: Vec<NodeRecord>) -> Result<Self> {
        let diag = validate_tree(asset_count, &records);
        if !diag.passed() {
            return Err(EndowError::InvalidTree(diag.failures().join(", ")));
        }
        let index: HashMap<&str, usize> = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect();
        let mut nodes: Vec<Node> = records
            .iter()
            .map(|r| Node {
                parent: r.parent.as_deref().map(|p| index[p]),
                children: Vec::new(),
                level: 0,
            })
            .collect();
        for i in 0..nodes.len() {
            if let Some(p) = nodes[i].parent {
                nodes[p].children.push(i);
            }
        }
        let root = nodes.iter().position(|n| n.parent.is_none()).unwrap();

        let mut leaves = Vec::new();
        let mut inner = Vec::new();
        let mut inner_leaf_range: Vec<(usize, usize)> = Vec::new();
        let mut stack = vec![(root, 0usize, false)];
        // explicit DFS; the second visit of an inner node closes its leaf range
        let mut open: HashMap<usize, usize> = HashMap::new();
        while let Some((n, level, closing)) = stack.pop() {
            if closing {
                let pos = open[&n];
                inner_leaf_range[pos] = (inner_leaf_range[pos].0, leaves.len());
                continue;
            }
            nodes[n].level = level;
            if nodes[n].children.is_empty() {
                leaves.push(n);
            } else {
                open.insert(n, inner.len());
                inner.push(n);
                inner_leaf_range.push((leaves.len(), leaves.len()));
                stack.push((n, level, true));
                for &c in nodes[n].children.iter().rev() {
                    stack.push((c, level + 1, false));
                }
            }
        }
        let horizon = nodes.iter().map(|n| n.level).max().unwrap_or(0);

        let inner_pos: HashMap<usize, usize> =
            inner.iter().enumerate().map(|(k, &n)| (n, k)).collect();
        let dim = inner.len() * asset_count;
        let gains = leaves
            .iter()
            .map(|&leaf| {
                let mut row = vec![0.0; dim];
                let mut cur = leaf;
                while let Some(p) = nodes[cur].parent {
                    let k = inner_pos[&p];
                    for a in 0..asset_count {
                        row[k * asset_count + a] = records[cur].prices[a] - records[p].prices[a];
                    }
                    cur = p;
                }
                row
            })
            .collect();

        Ok(Self {
            records,
            nodes,
            asset_count,
            horizon,
            leaves,
            inner,
            gains,
            inner_leaf_range,
        })
    }

    pub fn validate(&self) -> TreeDiagnostics {
        validate_tree(self.asset_count, &self.records)
    }

    pub fn records(&self) -> &[NodeRecord] {
        &self.records
    }

    pub fn asset_count(&self) -> usize {
        self.asset_count
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn inner_count(&self) -> usize {
        self.inner.len()
    }

    /// Number of scalar strategy variables: one holding per asset per non-terminal node.
    pub fn strategy_dim(&self) -> usize {
        self.inner.len() * self.asset_count
    }

    pub fn leaf_ids(&self) -> Vec<&str> {
        self.leaves.iter().map(|&l| self.records[l].id.as_str()).collect()
    }

    pub fn inner_ids(&self) -> Vec<&str> {
        self.inner.iter().map(|&n| self.records[n].id.as_str()).collect()
    }

    /// Unconditional probability of each leaf; recomputed on every call.
    pub fn leaf_measure(&self) -> Vec<f64> {
        self.leaves
            .iter()
            .map(|&leaf| {
                let mut prob = 1.0;
                let mut cur = leaf;
                while let Some(p) = self.nodes[cur].parent {
                    prob *= self.records[cur].p;
                    cur = p;
                }
                prob
            })
            .collect()
    }

    /// Terminal price of one asset per leaf.
    pub fn terminal_prices(&self, asset: usize) -> Vec<f64> {
        self.leaves.iter().map(|&l| self.records[l].prices[asset]).collect()
    }

    pub fn root_prices(&self) -> &[f64] {
        let root = self.nodes.iter().position(|n| n.parent.is_none()).unwrap();
        &self.records[root].prices
    }

    /// Leaf-by-strategy-variable increment matrix.
    pub fn gains_matrix(&self) -> &[Vec<f64>] {
        &self.gains
    }

    /// Leaf index range `[start, end)` below the k-th non-terminal node.
    pub fn leaves_below_inner(&self, k: usize) -> (usize, usize) {
        self.inner_leaf_range[k]
    }

    /// Price increments from the k-th non-terminal node to each of its children:
    /// one row per child.
    pub fn local_increments(&self, k: usize) -> Vec<Vec<f64>> {
        let n = self.inner[k];
        self.nodes[n]
            .children
            .iter()
            .map(|&c| {
                (0..self.asset_count)
                    .map(|a| self.records[c].prices[a] - self.records[n].prices[a])
                    .collect()
            })
            .collect()
    }

    /// Cumulative trading gains per leaf for a flattened strategy vector.
    pub fn gains_flat(&self, h: &[f64]) -> Vec<f64> {
        self.gains
            .iter()
            .map(|row| row.iter().zip(h).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn gains(&self, strategy: &Strategy) -> Result<Vec<f64>> {
        strategy.check_shape(self)?;
        Ok(self.gains_flat(&strategy.flatten()))
    }

    /// Terminal wealth `x + (H . S)_T` at every leaf.
    pub fn terminal_wealth(&self, strategy: &Strategy, x: f64) -> Result<TerminalWealth> {
        let g = self.gains(strategy)?;
        Ok(TerminalWealth {
            value: g.into_iter().map(|v| x + v).collect(),
        })
    }
}

/// Free-function form of [`ScenarioTree::terminal_wealth`].
pub fn terminal_wealth(tree: &ScenarioTree, strategy: &Strategy, x: f64) -> Result<TerminalWealth> {
    tree.terminal_wealth(strategy, x)
}

/// Free-function form of [`ScenarioTree::leaf_measure`].
pub fn leaf_measure(tree: &ScenarioTree) -> Vec<f64> {
    tree.leaf_measure()
}

/// Share holdings per non-terminal node (depth-first order), one entry per asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub holdings: Vec<Vec<f64>>,
}

impl Strategy {
    pub fn zeros(tree: &ScenarioTree) -> Self {
        Self {
            holdings: vec![vec![0.0; tree.asset_count()]; tree.inner_count()],
        }
    }

    /// The same holdings at every non-terminal node.
    pub fn constant(tree: &ScenarioTree, holding: &[f64]) -> Result<Self> {
        check_len("strategy holding", tree.asset_count(), holding.len())?;
        Ok(Self {
            holdings: vec![holding.to_vec(); tree.inner_count()],
        })
    }

    pub fn from_flat(tree: &ScenarioTree, flat: &[f64]) -> Result<Self> {
        check_len("flattened strategy", tree.strategy_dim(), flat.len())?;
        let d = tree.asset_count();
        Ok(Self {
            holdings: flat.chunks(d).map(<[f64]>::to_vec).collect(),
        })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.holdings.iter().flatten().copied().collect()
    }

    fn check_shape(&self, tree: &ScenarioTree) -> Result<()> {
        check_len("strategy nodes", tree.inner_count(), self.holdings.len())?;
        for h in &self.holdings {
            check_len("strategy assets", tree.asset_count(), h.len())?;
            if h.iter().any(|v| !v.is_finite()) {
                return Err(EndowError::InvalidInput("non-finite holding".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalWealth {
    pub value: Vec<f64>,
}

/// A non-traded European claim paying `payoff[leaf]` at maturity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub name: String,
    pub payoff: Vec<f64>,
}

impl Claim {
    pub fn new(name: impl Into<String>, payoff: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            payoff,
        }
    }
}

/// Initial capital and claim quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub x: f64,
    pub q: Vec<f64>,
}

impl Portfolio {
    pub fn new(x: f64, q: Vec<f64>) -> Self {
        Self { x, q }
    }
}

/// Leafwise `sum_i q_i f_i`.
pub fn combined_payoff(claims: &[Claim], q: &[f64], leaf_count: usize) -> Result<Vec<f64>> {
    check_len("claim quantities", claims.len(), q.len())?;
    let mut out = vec![0.0; leaf_count];
    for (c, &qi) in claims.iter().zip(q) {
        check_len("claim payoff", leaf_count, c.payoff.len())?;
        for (o, &f) in out.iter_mut().zip(&c.payoff) {
            *o += qi * f;
        }
    }
    Ok(out)
}

/// Probability-weighted sum over leaves.
pub(crate) fn expectation(prob: &[f64], values: &[f64]) -> f64 {
    prob.iter().zip(values).map(|(p, v)| p * v).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClaimRecord {
    name: String,
    payoff: Vec<f64>,
}

/// On-disk market document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MarketFile {
    assets: Vec<String>,
    nodes: Vec<NodeRecord>,
    claims: Vec<ClaimRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<serde_json::Value>,
}

/// A scenario tree together with its asset names and the agent's claims.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    pub assets: Vec<String>,
    pub tree: ScenarioTree,
    pub claims: Vec<Claim>,
    pub metadata: Option<serde_json::Value>,
}

impl Market {
    pub fn new(assets: Vec<String>, records: Vec<NodeRecord>, claims: Vec<Claim>) -> Result<Self> {
        let tree = ScenarioTree::new(assets.len(), records)?;
        for c in &claims {
            check_len("claim payoff", tree.leaf_count(), c.payoff.len())?;
            if c.payoff.iter().any(|v| !v.is_finite()) {
                return Err(EndowError::InvalidInput(format!(
                    "claim {} has a non-finite payoff",
                    c.name
                )));
            }
        }
        Ok(Self {
            assets,
            tree,
            claims,
            metadata: None,
        })
    }

    pub fn with_claims(&self, claims: Vec<Claim>) -> Result<Self> {
        let mut m = Market::new(self.assets.clone(), self.tree.records().to_vec(), claims)?;
        m.metadata = self.metadata.clone();
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MarketFile = serde_json::from_str(text)
            .map_err(|e| EndowError::InvalidInput(format!("market file: {e}")))?;
        let claims = file
            .claims
            .into_iter()
            .map(|c| Claim::new(c.name, c.payoff))
            .collect();
        let mut m = Market::new(file.assets, file.nodes, claims)?;
        m.metadata = file.metadata;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let file = MarketFile {
            assets: self.assets.clone(),
            nodes: self.tree.records().to_vec(),
            claims: self
                .claims
                .iter()
                .map(|c| ClaimRecord {
                    name: c.name.clone(),
                    payoff: c.payoff.clone(),
                })
                .collect(),
            metadata: self.metadata.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("market serializes");
        s.push('\n');
        s
    }

    pub fn combined_payoff(&self, q: &[f64]) -> Result<Vec<f64>> {
        combined_payoff(&self.claims, q, self.tree.leaf_count())
    }
}

/// Complete one-period binomial market: S0 = 1, leaves {2, 0.5}, P = (1/2, 1/2), claim (1, 0).
pub fn instance_a() -> Market {
    Market::new(
        vec!["S".into()],
        vec![
            NodeRecord::new("root", None, 1.0, vec![1.0]),
            NodeRecord::new("up", Some("root"), 0.5, vec![2.0]),
            NodeRecord::new("down", Some("root"), 0.5, vec![0.5]),
        ],
        vec![Claim::new("call", vec![1.0, 0.0])],
    )
    .expect("instance A is well formed")
}

/// Incomplete one-period trinomial market: S0 = 1, leaves {2, 1, 0.5}, uniform P, claim (1, 0, 0).
pub fn instance_b() -> Market {
    let third = 1.0 / 3.0;
    Market::new(
        vec!["S".into()],
        vec![
            NodeRecord::new("root", None, 1.0, vec![1.0]),
            NodeRecord::new("u", Some("root"), third, vec![2.0]),
            NodeRecord::new("m", Some("root"), third, vec![1.0]),
            NodeRecord::new("d", Some("root"), 1.0 - 2.0 * third, vec![0.5]),
        ],
        vec![Claim::new("call", vec![1.0, 0.0, 0.0])],
    )
    .expect("instance B is well formed")
}
