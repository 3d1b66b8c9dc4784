//! Python bindings. Reports cross the boundary as plain dicts built from the
//! serde form of the Rust types, so field names match the CLI's JSON output.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use endow::cli::generate::is_complete;
use endow::cli::{generate_market, load_market, GenParams};
use endow::geometry::{self, Geometry};
use endow::pricing::Pricer;
use endow::solver::{Solver as RsSolver, SolverOptions};
use endow::utility::check_invariants;
use endow::{Claim, EndowError, Market as RsMarket, Utility as _, UtilitySpec};

create_exception!(endow, EndowException, PyException, "Base class of solver errors.");
create_exception!(endow, InvalidInputError, EndowException, "Malformed tree, claim or argument.");
create_exception!(endow, NoEmmError, EndowException, "The market admits arbitrage.");
create_exception!(endow, NotInKError, EndowException, "Portfolio outside the acceptable cone.");
create_exception!(endow, NotInLError, EndowException, "Dual point outside the dual cone.");
create_exception!(endow, NonConvergenceError, EndowException, "An iterative method gave up.");
create_exception!(endow, CertificateError, EndowException, "An optimality certificate failed.");

fn err(e: EndowError) -> PyErr {
    let msg = e.to_string();
    match e {
        EndowError::InvalidTree(_) | EndowError::DimensionMismatch { .. } | EndowError::InvalidInput(_) => {
            InvalidInputError::new_err(msg)
        }
        EndowError::NoEmm { .. } => NoEmmError::new_err(msg),
        EndowError::NotInK { .. } => NotInKError::new_err(msg),
        EndowError::NotInL(_) => NotInLError::new_err(msg),
        EndowError::CertificateFailure(_) => CertificateError::new_err(msg),
        EndowError::NonConvergence { .. } | EndowError::BracketFailure { .. } | EndowError::Lp(_) => {
            NonConvergenceError::new_err(msg)
        }
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    // non-finite floats become null, as in the CLI reports
    let text = serde_json::to_string(value).map_err(|e| EndowException::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A scenario-tree market with its non-traded claims.
#[pyclass(name = "Market", module = "endow", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyMarket {
    inner: RsMarket,
}

#[pymethods]
impl PyMarket {
    /// Parse the JSON market schema.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        RsMarket::from_json(text).map(|inner| Self { inner }).map_err(err)
    }

    /// `"a"` (complete binomial) or `"b"` (incomplete trinomial).
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        load_market(&format!("builtin:{name}")).map(|inner| Self { inner }).map_err(err)
    }

    /// Read a market file, or a `builtin:` name.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_market(path).map(|inner| Self { inner }).map_err(err)
    }

    /// Seeded arbitrage-free random market.
    #[staticmethod]
    #[pyo3(signature = (seed=42, branches=3, periods=1, assets=1, claims=1))]
    fn generate(seed: u64, branches: usize, periods: usize, assets: usize, claims: usize) -> PyResult<Self> {
        let params = GenParams {
            seed,
            branches,
            periods,
            assets,
            claims,
        };
        generate_market(&params).map(|inner| Self { inner }).map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Same tree, claims replaced by `(name, payoff)` pairs.
    fn with_claims(&self, claims: Vec<(String, Vec<f64>)>) -> PyResult<Self> {
        let claims = claims.into_iter().map(|(n, p)| Claim::new(n, p)).collect();
        self.inner.with_claims(claims).map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn leaf_count(&self) -> usize {
        self.inner.tree.leaf_count()
    }

    #[getter]
    fn asset_count(&self) -> usize {
        self.inner.tree.asset_count()
    }

    #[getter]
    fn claim_count(&self) -> usize {
        self.inner.claims.len()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.tree.horizon()
    }

    #[getter]
    fn leaf_ids(&self) -> Vec<String> {
        self.inner.tree.leaf_ids().into_iter().map(String::from).collect()
    }

    #[getter]
    fn claim_names(&self) -> Vec<String> {
        self.inner.claims.iter().map(|c| c.name.clone()).collect()
    }

    /// Physical probability of each leaf, in leaf order.
    fn leaf_measure(&self) -> Vec<f64> {
        self.inner.tree.leaf_measure()
    }

    fn is_complete(&self) -> bool {
        is_complete(&self.inner.tree)
    }

    /// An interior martingale measure as a dict with leaf masses `q`.
    fn find_emm<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &geometry::find_emm(&self.inner.tree).map_err(err)?)
    }

    /// Arbitrage strategy and its gains, or `None` when an EMM exists.
    fn find_arbitrage<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &geometry::find_arbitrage(&self.inner.tree).map_err(err)?)
    }

    /// `(lower, upper)` arbitrage-free price bounds, one pair per claim.
    fn price_bounds(&self) -> PyResult<Vec<(f64, f64)>> {
        let g = Geometry::new(&self.inner.tree).map_err(err)?;
        self.inner.claims.iter().map(|c| g.price_bounds(c).map_err(err)).collect()
    }

    fn in_price_set<'py>(&self, py: Python<'py>, p: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &geometry::in_price_set(&self.inner.tree, &self.inner.claims, &p).map_err(err)?)
    }

    fn in_k<'py>(&self, py: Python<'py>, x: f64, q: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &geometry::in_k(&self.inner.tree, &self.inner.claims, x, &q).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!(
            "Market(leaves={}, assets={}, claims={})",
            self.leaf_count(),
            self.asset_count(),
            self.claim_count()
        )
    }
}

/// Log or power utility, with its conjugate.
#[pyclass(name = "Utility", module = "endow", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyUtility {
    spec: UtilitySpec,
}

#[pymethods]
impl PyUtility {
    /// `"log"`, `"power:<gamma>"` or the JSON form `{"kind": "power", "gamma": g}`.
    #[new]
    #[pyo3(signature = (spec="log"))]
    fn new(spec: &str) -> PyResult<Self> {
        UtilitySpec::parse(spec).map(|spec| Self { spec }).map_err(err)
    }

    #[staticmethod]
    fn log() -> Self {
        Self { spec: UtilitySpec::Log }
    }

    #[staticmethod]
    fn power(gamma: f64) -> PyResult<Self> {
        UtilitySpec::power(gamma).map(|spec| Self { spec }).map_err(err)
    }

    #[getter]
    fn label(&self) -> String {
        self.spec.label()
    }

    fn value(&self, x: f64) -> f64 {
        self.spec.value(x)
    }

    fn marginal(&self, x: f64) -> f64 {
        self.spec.marginal(x)
    }

    fn conjugate(&self, y: f64) -> f64 {
        self.spec.conjugate(y)
    }

    fn inverse_marginal(&self, y: f64) -> f64 {
        self.spec.inverse_marginal(y)
    }

    /// Numerical checks of concavity, conjugacy and the Inada conditions.
    fn check_invariants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &check_invariants(&self.spec))
    }

    fn __repr__(&self) -> String {
        format!("Utility({:?})", self.spec.label())
    }
}

fn utility_arg(ob: &Bound<'_, PyAny>) -> PyResult<UtilitySpec> {
    if let Ok(u) = ob.extract::<PyRef<'_, PyUtility>>() {
        return Ok(u.spec);
    }
    UtilitySpec::parse(&ob.extract::<String>()?).map_err(err)
}

/// Primal and dual solver plus the pricing layer for one market and utility.
///
/// Each call rebuilds the geometry, so the object is cheap to hold and safe to
/// share between threads.
#[pyclass(name = "Solver", module = "endow", frozen)]
pub struct PySolver {
    market: RsMarket,
    utility: UtilitySpec,
    options: SolverOptions,
}

#[derive(Serialize)]
struct SolveOut<'a> {
    primal: &'a endow::solver::PrimalSolution,
    dual: &'a endow::solver::DualSolution,
    certificate: &'a endow::solver::OptimalityCertificate,
}

impl PySolver {
    fn q_or_zero(&self, q: Option<Vec<f64>>) -> Vec<f64> {
        q.unwrap_or_else(|| vec![0.0; self.market.claims.len()])
    }

    fn with<T>(&self, f: impl FnOnce(&RsSolver<'_>) -> endow::Result<T>) -> PyResult<T> {
        let s = RsSolver::with_options(&self.market.tree, &self.market.claims, &self.utility, self.options).map_err(err)?;
        f(&s).map_err(err)
    }

    fn pricer<T>(&self, f: impl FnOnce(&Pricer<'_>) -> endow::Result<T>) -> PyResult<T> {
        let p = Pricer::with_options(&self.market.tree, &self.market.claims, &self.utility, self.options).map_err(err)?;
        f(&p).map_err(err)
    }
}

#[pymethods]
impl PySolver {
    #[new]
    #[pyo3(signature = (market, utility=None, tol_grad=None, tol_cert=None))]
    fn new(
        market: &PyMarket,
        utility: Option<&Bound<'_, PyAny>>,
        tol_grad: Option<f64>,
        tol_cert: Option<f64>,
    ) -> PyResult<Self> {
        let utility = utility.map(utility_arg).transpose()?.unwrap_or(UtilitySpec::Log);
        let mut options = SolverOptions::default();
        options.tol_grad = tol_grad.unwrap_or(options.tol_grad);
        options.tol_cert = tol_cert.unwrap_or(options.tol_cert);
        options.validate().map_err(err)?;
        Ok(Self {
            market: market.inner.clone(),
            utility,
            options,
        })
    }

    /// Primal optimum, the dual read off it, and the certificate tying them.
    #[pyo3(signature = (x, q=None))]
    fn solve<'py>(&self, py: Python<'py>, x: f64, q: Option<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let q = self.q_or_zero(q);
        let (primal, dual, certificate) = self.with(|s| {
            let primal = s.solve_primal(x, &q)?;
            let (dual, cert) = s.extract_dual_candidate(&primal)?;
            Ok((primal, dual, cert))
        })?;
        to_py(
            py,
            &SolveOut {
                primal: &primal,
                dual: &dual,
                certificate: &certificate,
            },
        )
    }

    #[pyo3(signature = (x, q=None))]
    fn solve_primal<'py>(&self, py: Python<'py>, x: f64, q: Option<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let q = self.q_or_zero(q);
        to_py(py, &self.with(|s| s.solve_primal(x, &q))?)
    }

    /// Direct dual minimization at `(y, r)`.
    #[pyo3(signature = (y, r=None))]
    fn solve_dual<'py>(&self, py: Python<'py>, y: f64, r: Option<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let r = self.q_or_zero(r);
        to_py(py, &self.with(|s| s.solve_dual(y, &r))?)
    }

    #[pyo3(signature = (x, q=None))]
    fn conjugacy_gap<'py>(&self, py: Python<'py>, x: f64, q: Option<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let q = self.q_or_zero(q);
        to_py(py, &self.with(|s| s.conjugacy_gap(x, &q))?)
    }

    #[pyo3(signature = (x, q=None))]
    fn subgradient<'py>(&self, py: Python<'py>, x: f64, q: Option<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let q = self.q_or_zero(q);
        to_py(py, &self.with(|s| s.subgradient(x, &q))?)
    }

    fn dual_separation<'py>(&self, py: Python<'py>, h: Vec<f64>, y: f64, r: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.with(|s| s.dual_separation(&h, y, &r))?)
    }

    /// Value of the claim-free problem at capital `x`.
    fn value_w(&self, x: f64) -> PyResult<f64> {
        self.with(|s| s.value_w(x))
    }

    fn value_w_tilde<'py>(&self, py: Python<'py>, y: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.with(|s| s.value_w_tilde(y))?)
    }

    /// Marginal utility-based price of each claim at `(x, q)`.
    #[pyo3(signature = (x, q=None))]
    fn utility_price(&self, x: f64, q: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        let q = self.q_or_zero(q);
        self.pricer(|p| p.utility_based_price(x, &q))
    }

    #[pyo3(signature = (x, q=None))]
    fn certainty_equivalent<'py>(&self, py: Python<'py>, x: f64, q: Option<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let q = self.q_or_zero(q);
        to_py(py, &self.pricer(|p| p.certainty_equivalent(x, &q))?)
    }

    /// Utility prices against the arbitrage-free bounds.
    #[pyo3(signature = (x, q=None))]
    fn consistency<'py>(&self, py: Python<'py>, x: f64, q: Option<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let q = self.q_or_zero(q);
        to_py(py, &self.pricer(|p| p.consistency_check(x, &q))?)
    }

    #[pyo3(signature = (x, q=None))]
    fn price_report<'py>(&self, py: Python<'py>, x: f64, q: Option<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let q = self.q_or_zero(q);
        to_py(py, &self.pricer(|p| p.report(x, &q))?)
    }

    fn __repr__(&self) -> String {
        format!("Solver(utility={:?}, claims={})", self.utility.label(), self.market.claims.len())
    }
}

/// Adds the classes and exceptions to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<PyMarket>()?;
    m.add_class::<PyUtility>()?;
    m.add_class::<PySolver>()?;
    m.add("EndowError", py.get_type::<EndowException>())?;
    m.add("InvalidInputError", py.get_type::<InvalidInputError>())?;
    m.add("NoEmmError", py.get_type::<NoEmmError>())?;
    m.add("NotInKError", py.get_type::<NotInKError>())?;
    m.add("NotInLError", py.get_type::<NotInLError>())?;
    m.add("NonConvergenceError", py.get_type::<NonConvergenceError>())?;
    m.add("CertificateError", py.get_type::<CertificateError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[pymodule(name = "endow")]
fn endow_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
