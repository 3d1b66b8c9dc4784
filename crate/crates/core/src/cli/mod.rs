//! Command-line front end: `solve`, `price`, `verify` and `gen`.
//!
//! Reports are assembled in full before anything is written, so error paths
//! emit nothing on stdout. Exit codes: 0 success, 1 verification or
//! certificate failure, 2 no equivalent martingale measure, 3 portfolio
//! outside the acceptable cone, 4 non-convergence, 5 usage or configuration
//! error.

pub mod generate;
pub mod verify;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EndowError, Result};
use crate::geometry::{find_arbitrage, Geometry, PriceMembership};
use crate::market::{instance_a, instance_b, Market, Portfolio};
use crate::pricing::{CertaintyEquivalent, ConsistencyReport, DifferentiabilityProbe, Pricer};
use crate::solver::{OptimalityCertificate, SolverOptions};
use crate::utility::{Utility, UtilitySpec};

pub use generate::{generate_market, GenParams};
pub use verify::{default_portfolios, verify_instance, Check, InstanceReport, SuiteOptions};

pub const SCHEMA_VERSION: u32 = 1;

pub mod exit {
    pub const OK: i32 = 0;
    pub const VERIFY_FAILED: i32 = 1;
    pub const NO_EMM: i32 = 2;
    pub const NOT_IN_K: i32 = 3;
    pub const NON_CONVERGENCE: i32 = 4;
    pub const USAGE: i32 = 5;
}

pub fn exit_code(e: &EndowError) -> i32 {
    match e {
        EndowError::NoEmm { .. } => exit::NO_EMM,
        EndowError::NotInK { .. } => exit::NOT_IN_K,
        EndowError::NonConvergence { .. } | EndowError::BracketFailure { .. } | EndowError::Lp(_) => {
            exit::NON_CONVERGENCE
        }
        EndowError::CertificateFailure(_) | EndowError::NotInL(_) => exit::VERIFY_FAILED,
        EndowError::InvalidTree(_) | EndowError::DimensionMismatch { .. } | EndowError::InvalidInput(_) => {
            exit::USAGE
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Parser)]
#[command(name = "endow", version, about = "Utility maximization and pricing with random endowment on finite trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the primal and dual problems at one portfolio.
    Solve(RunArgs),
    /// Superreplication bounds, utility-based prices and certainty equivalent.
    Price(RunArgs),
    /// Run the invariant suite.
    Verify(VerifyArgs),
    /// Write a seeded random market file.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Market file, or `builtin:a` / `builtin:b` for the shipped fixtures.
    #[arg(long)]
    pub market: Option<String>,
    /// `log`, `power:<gamma>` or a JSON object.
    #[arg(long)]
    pub utility: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<f64>,
    /// Claim quantities, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub q: Option<Vec<f64>>,
    #[arg(long)]
    pub tol_grad: Option<f64>,
    #[arg(long)]
    pub tol_cert: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON run configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Add wall-clock timing to the report (makes it non-deterministic).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Also verify this many seeded random markets.
    #[arg(long, default_value_t = 0)]
    pub random: usize,
    /// Corrupt every dual candidate by 1% before certification.
    #[arg(long)]
    pub inject_fault: bool,
    /// Skip the cold dual and price-minimization checks on explicit markets.
    #[arg(long)]
    pub shallow: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub branches: usize,
    #[arg(long, default_value_t = 1)]
    pub periods: usize,
    #[arg(long, default_value_t = 1)]
    pub assets: usize,
    #[arg(long, default_value_t = 1)]
    pub claims: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// File form of a run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub market: Option<String>,
    /// `"log"`, `"power:g"` or `{"kind": ...}`; objects are kept as their JSON text.
    #[serde(deserialize_with = "utility_text")]
    pub utility: Option<String>,
    pub x: Option<f64>,
    pub q: Option<Vec<f64>>,
    pub tol_grad: Option<f64>,
    pub tol_cert: Option<f64>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
}

fn utility_text<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    Ok(match Option::<serde_json::Value>::deserialize(d)? {
        None => None,
        Some(serde_json::Value::String(s)) => Some(s),
        Some(v) => Some(v.to_string()),
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EndowError::InvalidInput(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| EndowError::InvalidInput(format!("config {}: {e}", path.display())))
    }

    /// Flags override file values.
    pub fn merged(mut self, args: &RunArgs) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if args.$f.is_some() { self.$f = args.$f.clone(); } )* };
        }
        take!(market, utility, x, q, tol_grad, tol_cert, format, seed);
        self
    }
}

/// Validated run inputs.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub market_name: Option<String>,
    pub market: Option<Market>,
    pub utility: Option<UtilitySpec>,
    pub x: Option<f64>,
    pub q: Option<Vec<f64>>,
    pub options: SolverOptions,
    pub format: Format,
    pub seed: u64,
}

pub fn load_market(name: &str) -> Result<Market> {
    match name {
        "builtin:a" => Ok(instance_a()),
        "builtin:b" => Ok(instance_b()),
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| EndowError::InvalidInput(format!("market file {path}: {e}")))?;
            Market::from_json(&text)
        }
    }
}

fn resolve(args: &RunArgs) -> Result<Resolved> {
    let base = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.merged(args);
    let mut options = SolverOptions::default();
    if let Some(t) = cfg.tol_grad {
        options.tol_grad = t;
    }
    if let Some(t) = cfg.tol_cert {
        options.tol_cert = t;
    }
    options.validate()?;
    let utility = cfg.utility.as_deref().map(UtilitySpec::parse).transpose()?;
    let market = cfg.market.as_deref().map(load_market).transpose()?;
    if let (Some(m), Some(q)) = (&market, &cfg.q) {
        crate::error::check_len("claim quantities", m.claims.len(), q.len())?;
    }
    if cfg.x.is_some_and(|x| !x.is_finite()) || cfg.q.as_ref().is_some_and(|q| q.iter().any(|v| !v.is_finite())) {
        return Err(EndowError::InvalidInput("portfolio must be finite".into()));
    }
    Ok(Resolved {
        market_name: cfg.market,
        market,
        utility,
        x: cfg.x,
        q: cfg.q,
        options,
        format: cfg.format.unwrap_or(Format::Json),
        seed: cfg.seed.unwrap_or(0),
    })
}

/// Echo of the resolved inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Echo {
    pub command: &'static str,
    pub market: Option<String>,
    pub utility: Option<String>,
    pub portfolio: Option<Portfolio>,
    pub tol_grad: f64,
    pub tol_cert: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimalOut {
    pub u: f64,
    pub strategy: Vec<Vec<f64>>,
    pub terminal_wealth: Vec<f64>,
    pub consumption: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualOut {
    pub y: f64,
    pub r: Vec<f64>,
    pub v: f64,
    pub h: Vec<f64>,
    pub conjugacy_gap: f64,
    pub conjugacy_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub schema_version: u32,
    pub echo: Echo,
    pub primal: PrimalOut,
    pub dual: DualOut,
    pub certificate: OptimalityCertificate,
    pub utility_price: Vec<f64>,
    pub certainty_equivalent: CertaintyEquivalent,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimBounds {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub replicable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceCmdReport {
    pub schema_version: u32,
    pub echo: Echo,
    pub bounds: Vec<ClaimBounds>,
    pub utility_price: Vec<f64>,
    /// Price-set membership of the non-replicable components, with a witness measure.
    pub witness: PriceMembership,
    pub certainty_equivalent: CertaintyEquivalent,
    pub consistency: ConsistencyReport,
    pub probe: DifferentiabilityProbe,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifySummary {
    pub instances: usize,
    pub passed: usize,
    pub failed: usize,
    pub max_conjugacy_gap: f64,
    pub max_marginal_residual: f64,
    pub max_budget_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub echo: Echo,
    pub instances: Vec<InstanceReport>,
    pub summary: VerifySummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
}

/// Result of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn failure(e: &EndowError) -> Self {
        Self {
            code: exit_code(e),
            stdout: String::new(),
            stderr: format!("error: {e}\n"),
        }
    }
}

pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let text = e.render().to_string();
            return if code == exit::OK {
                Outcome { code, stdout: text, stderr: String::new() }
            } else {
                Outcome { code, stdout: String::new(), stderr: text }
            };
        }
    };
    let (out_path, result) = match &cli.command {
        Command::Solve(a) => (a.out.clone(), cmd_solve(a)),
        Command::Price(a) => (a.out.clone(), cmd_price(a)),
        Command::Verify(a) => (a.run.out.clone(), cmd_verify(a)),
        Command::Gen(a) => (a.out.clone(), cmd_gen(a).map(|s| (exit::OK, s))),
    };
    match result {
        Ok((code, body)) => match out_path {
            Some(p) => match std::fs::write(&p, &body) {
                Ok(()) => Outcome { code, stdout: String::new(), stderr: String::new() },
                Err(e) => Outcome::failure(&EndowError::InvalidInput(format!("{}: {e}", p.display()))),
            },
            None => Outcome { code, stdout: body, stderr: String::new() },
        },
        Err(e) => {
            let mut o = Outcome::failure(&e);
            if let EndowError::NoEmm { .. } = e {
                o.stderr.push_str(&arbitrage_note(&cli.command));
            }
            o
        }
    }
}

/// Arbitrage strategy attached to a missing-measure error.
fn arbitrage_note(command: &Command) -> String {
    let name = match command {
        Command::Solve(a) | Command::Price(a) => a.clone().market,
        Command::Verify(a) => a.run.market.clone(),
        Command::Gen(_) => None,
    };
    let Some(market) = name.and_then(|n| load_market(&n).ok()) else {
        return String::new();
    };
    match find_arbitrage(&market.tree) {
        Ok(Some(a)) => format!(
            "arbitrage certificate: {}\n",
            serde_json::to_string(&a).unwrap_or_default()
        ),
        _ => String::new(),
    }
}

fn require_market(r: &Resolved) -> Result<&Market> {
    r.market
        .as_ref()
        .ok_or_else(|| EndowError::InvalidInput("--market is required".into()))
}

fn portfolio(r: &Resolved, market: &Market) -> Result<Portfolio> {
    let x = r.x.ok_or_else(|| EndowError::InvalidInput("--x is required".into()))?;
    let q = r.q.clone().unwrap_or_else(|| vec![0.0; market.claims.len()]);
    Ok(Portfolio::new(x, q))
}

fn echo(command: &'static str, r: &Resolved, p: Option<Portfolio>) -> Echo {
    Echo {
        command,
        market: r.market_name.clone(),
        utility: r.utility.as_ref().map(|u| u.label()),
        portfolio: p,
        tol_grad: r.options.tol_grad,
        tol_cert: r.options.tol_cert,
        seed: r.seed,
    }
}

fn elapsed(start: Instant, on: bool) -> Option<f64> {
    on.then(|| start.elapsed().as_secs_f64() * 1e3)
}

fn no_csv(f: Format) -> Result<()> {
    if f == Format::Csv {
        Err(EndowError::InvalidInput("csv output is only available for verify".into()))
    } else {
        Ok(())
    }
}

pub fn cmd_solve(args: &RunArgs) -> Result<(i32, String)> {
    let start = Instant::now();
    let r = resolve(args)?;
    no_csv(r.format)?;
    let market = require_market(&r)?;
    let utility = r.utility.unwrap_or(UtilitySpec::Log);
    let pf = portfolio(&r, market)?;
    let pricer = Pricer::with_options(&market.tree, &market.claims, &utility, r.options)?;
    let solver = pricer.solver();
    let primal = solver.solve_primal(pf.x, &pf.q)?;
    let (dual, certificate) = solver.extract_dual_candidate(&primal)?;
    let gap = solver.conjugacy_gap(pf.x, &pf.q)?;
    let utility_price = pricer.utility_based_price(pf.x, &pf.q)?;
    let ce = pricer.certainty_equivalent(pf.x, &pf.q)?;
    let checks = vec![
        bool_check("optimality certificate", certificate.passed),
        bool_check("conjugacy gap", gap.passed),
    ];
    let report = SolveReport {
        schema_version: SCHEMA_VERSION,
        echo: echo("solve", &r, Some(pf.clone())),
        primal: PrimalOut {
            u: primal.value,
            strategy: primal.strategy.holdings.clone(),
            terminal_wealth: primal.terminal_wealth.clone(),
            consumption: primal.consumption.clone(),
            gradient_norm: primal.gradient_norm,
            iterations: primal.iterations,
        },
        dual: DualOut {
            y: dual.y,
            r: dual.r.clone(),
            v: gap.v,
            h: dual.h.clone(),
            conjugacy_gap: gap.gap,
            conjugacy_tolerance: gap.tolerance,
        },
        certificate,
        utility_price,
        certainty_equivalent: ce,
        checks,
        timing_ms: elapsed(start, args.timing),
    };
    let code = if report.checks.iter().all(|c| c.passed) { exit::OK } else { exit::VERIFY_FAILED };
    let body = match r.format {
        Format::Text => solve_text(&report),
        _ => to_json(&report),
    };
    Ok((code, body))
}

fn bool_check(name: &str, passed: bool) -> Check {
    Check {
        name: name.into(),
        passed,
        worst: None,
        tolerance: None,
        detail: None,
    }
}

pub fn cmd_price(args: &RunArgs) -> Result<(i32, String)> {
    let start = Instant::now();
    let r = resolve(args)?;
    no_csv(r.format)?;
    let market = require_market(&r)?;
    let utility = r.utility.unwrap_or(UtilitySpec::Log);
    let pf = portfolio(&r, market)?;
    let geo = Geometry::new(&market.tree)?;
    let mut bounds = Vec::with_capacity(market.claims.len());
    for c in &market.claims {
        let rep = geo.is_replicable(&c.payoff)?;
        bounds.push(ClaimBounds {
            name: c.name.clone(),
            lower: rep.lower,
            upper: rep.cost,
            replicable: rep.replicable,
        });
    }
    let pricer = Pricer::with_options(&market.tree, &market.claims, &utility, r.options)?;
    let price = pricer.report(pf.x, &pf.q)?;
    let red = pricer.solver().reduction();
    let kept: Vec<f64> = red.kept.iter().map(|&i| price.utility_price[i]).collect();
    let witness = geo.in_price_set(&red.reduced, &kept)?;
    let report = PriceCmdReport {
        schema_version: SCHEMA_VERSION,
        echo: echo("price", &r, Some(pf)),
        bounds,
        utility_price: price.utility_price,
        witness,
        certainty_equivalent: price.certainty_equivalent,
        consistency: price.consistency,
        probe: price.probe,
        timing_ms: elapsed(start, args.timing),
    };
    let code = if report.consistency.passed { exit::OK } else { exit::VERIFY_FAILED };
    let body = match r.format {
        Format::Text => price_text(&report),
        _ => to_json(&report),
    };
    Ok((code, body))
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<(i32, String)> {
    let start = Instant::now();
    let r = resolve(&args.run)?;
    let utilities = match r.utility {
        Some(u) => vec![u],
        None => vec![UtilitySpec::Log, UtilitySpec::Power { gamma: 0.5 }],
    };
    let mut markets: Vec<(String, Market, bool)> = match (&r.market_name, &r.market) {
        (Some(name), Some(m)) => vec![(name.clone(), m.clone(), !args.shallow)],
        _ => vec![
            ("builtin:a".into(), instance_a(), !args.shallow),
            ("builtin:b".into(), instance_b(), !args.shallow),
        ],
    };
    for i in 0..args.random {
        let params = generate::batch_params(r.seed, i);
        markets.push((format!("random-{i:04}"), generate_market(&params)?, false));
    }
    let explicit = r.x.map(|x| Portfolio::new(x, r.q.clone().unwrap_or_default()));
    let jobs: Vec<(String, &Market, UtilitySpec, bool)> = markets
        .iter()
        .flat_map(|(id, m, deep)| utilities.iter().map(move |u| (id.clone(), m, *u, *deep)))
        .collect();
    let mut instances: Vec<InstanceReport> = jobs
        .par_iter()
        .map(|(id, m, u, deep)| {
            let portfolios = match &explicit {
                Some(p) => {
                    let mut p = p.clone();
                    if p.q.is_empty() {
                        p.q = vec![0.0; m.claims.len()];
                    }
                    Ok(vec![p])
                }
                None => default_portfolios(m),
            };
            let suite = SuiteOptions {
                deep: *deep,
                inject_fault: args.inject_fault,
                samples: 50,
                seed: r.seed,
            };
            match portfolios {
                Ok(pfs) => verify_instance(id, m, u, &pfs, &suite, &r.options),
                Err(e) => InstanceReport {
                    id: id.clone(),
                    utility: u.label(),
                    leaves: m.tree.leaf_count(),
                    claims: m.claims.len(),
                    portfolios: vec![],
                    passed: false,
                    checks: vec![Check {
                        name: "interior martingale measure".into(),
                        passed: false,
                        worst: None,
                        tolerance: None,
                        detail: Some(e.to_string()),
                    }],
                },
            }
        })
        .collect();
    instances.sort_by(|a, b| (&a.id, &a.utility).cmp(&(&b.id, &b.utility)));
    let max = |name: &str| {
        instances
            .iter()
            .filter_map(|i| i.check(name).and_then(|c| c.worst))
            .fold(0.0, f64::max)
    };
    let passed = instances.iter().filter(|i| i.passed).count();
    let summary = VerifySummary {
        instances: instances.len(),
        passed,
        failed: instances.len() - passed,
        max_conjugacy_gap: max("conjugacy gap"),
        max_marginal_residual: max("marginal relation"),
        max_budget_residual: max("budget identity"),
    };
    let report = VerifyReport {
        schema_version: SCHEMA_VERSION,
        echo: echo("verify", &r, explicit),
        instances,
        summary,
        timing_ms: elapsed(start, args.run.timing),
    };
    let code = if report.summary.failed == 0 { exit::OK } else { exit::VERIFY_FAILED };
    let body = match r.format {
        Format::Json => to_json(&report),
        Format::Text => verify_text(&report),
        Format::Csv => verify_csv(&report)?,
    };
    Ok((code, body))
}

pub fn cmd_gen(args: &GenArgs) -> Result<String> {
    let params = GenParams {
        seed: args.seed,
        branches: args.branches,
        periods: args.periods,
        assets: args.assets,
        claims: args.claims,
    };
    Ok(generate_market(&params)?.to_json())
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn vec_text(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

fn solve_text(r: &SolveReport) -> String {
    let mut s = String::new();
    let pf = r.echo.portfolio.as_ref().expect("solve echoes its portfolio");
    s += &format!("market      {}\n", r.echo.market.as_deref().unwrap_or("-"));
    s += &format!("utility     {}\n", r.echo.utility.as_deref().unwrap_or("log"));
    s += &format!("portfolio   x = {}, q = {}\n", pf.x, vec_text(&pf.q));
    s += &format!("u           {}\n", r.primal.u);
    s += &format!("strategy    {}\n", vec_text(&r.primal.strategy.concat()));
    s += &format!("wealth      {}\n", vec_text(&r.primal.terminal_wealth));
    s += &format!("consumption {}\n", vec_text(&r.primal.consumption));
    s += &format!("(y, r)      ({}, {})\n", r.dual.y, vec_text(&r.dual.r));
    s += &format!("v           {}\n", r.dual.v);
    s += &format!("gap         {:e} (tolerance {:e})\n", r.dual.conjugacy_gap, r.dual.conjugacy_tolerance);
    s += &format!("price       {}\n", vec_text(&r.utility_price));
    s += &format!("ce          {}\n", r.certainty_equivalent.value);
    for c in &r.checks {
        s += &format!("{:<24} {}\n", c.name, pass(c.passed));
    }
    if let Some(t) = r.timing_ms {
        s += &format!("elapsed     {t:.3} ms\n");
    }
    s
}

fn price_text(r: &PriceCmdReport) -> String {
    let mut s = String::new();
    for b in &r.bounds {
        let kind = if b.replicable { "replicable" } else { "interval" };
        s += &format!("{:<12} [{}, {}] {kind}\n", b.name, b.lower, b.upper);
    }
    s += &format!("price        {}\n", vec_text(&r.utility_price));
    s += &format!("ce           {}\n", r.certainty_equivalent.value);
    if let Some(p) = r.certainty_equivalent.per_unit {
        s += &format!("ce per unit  {p}\n");
    }
    s += &format!("unique       {}\n", r.probe.unique_price);
    s += &format!("consistency  {}\n", pass(r.consistency.passed));
    if let Some(t) = r.timing_ms {
        s += &format!("elapsed      {t:.3} ms\n");
    }
    s
}

fn verify_text(r: &VerifyReport) -> String {
    let mut s = String::new();
    for inst in &r.instances {
        s += &format!("{} {} ({} leaves, {} claims)\n", inst.id, inst.utility, inst.leaves, inst.claims);
        for c in &inst.checks {
            let worst = c.worst.map(|w| format!("{w:.3e}")).unwrap_or_default();
            s += &format!("  {:<30} {} {worst}\n", c.name, pass(c.passed));
            if let Some(d) = &c.detail {
                s += &format!("    {d}\n");
            }
        }
    }
    let m = &r.summary;
    s += &format!(
        "{} instances, {} passed, {} failed; max gap {:.3e}, max marginal residual {:.3e}, max budget residual {:.3e}\n",
        m.instances, m.passed, m.failed, m.max_conjugacy_gap, m.max_marginal_residual, m.max_budget_residual
    );
    if let Some(t) = r.timing_ms {
        s += &format!("elapsed {t:.3} ms\n");
    }
    s
}

fn verify_csv(r: &VerifyReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| EndowError::InvalidInput(format!("csv: {e}"));
    w.write_record(["id", "utility", "leaves", "claims", "passed", "failed_checks", "max_gap", "max_marginal", "max_budget"])
        .map_err(io)?;
    for i in &r.instances {
        w.write_record([
            i.id.clone(),
            i.utility.clone(),
            i.leaves.to_string(),
            i.claims.to_string(),
            i.passed.to_string(),
            i.failures().join(";"),
            i.worst("conjugacy gap").to_string(),
            i.worst("marginal relation").to_string(),
            i.worst("budget identity").to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| EndowError::InvalidInput(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}
