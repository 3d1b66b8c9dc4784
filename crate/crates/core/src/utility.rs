//! Utility functions on `(0, inf)` with their convex conjugates.
//!
//! The conjugate is `V(y) = sup_{x>0} { U(x) - x y }`, and the inverse marginal
//! `I = (U')^{-1}` satisfies `V' = -I`. Custom utilities implement [`Utility`]
//! and should pass [`check_invariants`] before they are handed to a solver.

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::error::{EndowError, Result};

/// Evaluator contract for a utility function and its conjugate.
pub trait Utility: Debug + Send + Sync {
    /// `U(x)`, `x > 0`.
    fn value(&self, x: f64) -> f64;
    /// `U'(x)`.
    fn marginal(&self, x: f64) -> f64;
    /// `U''(x)`.
    fn curvature(&self, x: f64) -> f64;
    /// `V(y)`, `y > 0`.
    fn conjugate(&self, y: f64) -> f64;
    /// `V''(y)`.
    fn conjugate_curvature(&self, y: f64) -> f64;
    /// `I(y) = (U')^{-1}(y)`.
    fn inverse_marginal(&self, y: f64) -> f64;
    /// `V'(y) = -I(y)`.
    fn conjugate_slope(&self, y: f64) -> f64 {
        -self.inverse_marginal(y)
    }
    /// Closed-form asymptotic elasticity when the family has one.
    fn exact_asymptotic_elasticity(&self) -> Option<f64> {
        None
    }
    fn label(&self) -> String;
}

/// The shipped utility families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UtilitySpec {
    /// `U(x) = ln x`.
    Log,
    /// `U(x) = x^gamma / gamma`, `0 < gamma < 1`.
    Power { gamma: f64 },
}

impl UtilitySpec {
    pub fn power(gamma: f64) -> Result<Self> {
        let spec = UtilitySpec::Power { gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilitySpec::Log => Ok(()),
            UtilitySpec::Power { gamma } if gamma > 0.0 && gamma < 1.0 => Ok(()),
            UtilitySpec::Power { gamma } => Err(EndowError::InvalidInput(format!(
                "power utility needs gamma in (0, 1), got {gamma}"
            ))),
        }
    }

    /// Parses `log`, `power:0.5`, or a JSON object `{"kind": "power", "gamma": 0.5}`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        let spec = if t.starts_with('{') {
            serde_json::from_str(t).map_err(|e| EndowError::InvalidInput(format!("utility: {e}")))?
        } else if t == "log" {
            UtilitySpec::Log
        } else if let Some(g) = t.strip_prefix("power:").or_else(|| t.strip_prefix("power=")) {
            let gamma = g
                .parse::<f64>()
                .map_err(|e| EndowError::InvalidInput(format!("utility gamma: {e}")))?;
            UtilitySpec::Power { gamma }
        } else {
            return Err(EndowError::InvalidInput(format!("unknown utility `{t}`")));
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Utility for UtilitySpec {
    fn value(&self, x: f64) -> f64 {
        match *self {
            UtilitySpec::Log => x.ln(),
            UtilitySpec::Power { gamma } => x.powf(gamma) / gamma,
        }
    }

    fn marginal(&self, x: f64) -> f64 {
        match *self {
            UtilitySpec::Log => 1.0 / x,
            UtilitySpec::Power { gamma } => x.powf(gamma - 1.0),
        }
    }

    fn curvature(&self, x: f64) -> f64 {
        match *self {
            UtilitySpec::Log => -1.0 / (x * x),
            UtilitySpec::Power { gamma } => (gamma - 1.0) * x.powf(gamma - 2.0),
        }
    }

    fn conjugate(&self, y: f64) -> f64 {
        match *self {
            UtilitySpec::Log => -y.ln() - 1.0,
            UtilitySpec::Power { gamma } => (1.0 - gamma) / gamma * y.powf(gamma / (gamma - 1.0)),
        }
    }

    fn conjugate_curvature(&self, y: f64) -> f64 {
        match *self {
            UtilitySpec::Log => 1.0 / (y * y),
            UtilitySpec::Power { gamma } => y.powf((2.0 - gamma) / (gamma - 1.0)) / (1.0 - gamma),
        }
    }

    fn inverse_marginal(&self, y: f64) -> f64 {
        match *self {
            UtilitySpec::Log => 1.0 / y,
            UtilitySpec::Power { gamma } => y.powf(1.0 / (gamma - 1.0)),
        }
    }

    fn exact_asymptotic_elasticity(&self) -> Option<f64> {
        match *self {
            UtilitySpec::Log => Some(0.0),
            UtilitySpec::Power { gamma } => Some(gamma),
        }
    }

    fn label(&self) -> String {
        match *self {
            UtilitySpec::Log => "log".into(),
            UtilitySpec::Power { gamma } => format!("power:{gamma}"),
        }
    }
}

/// 64 log-spaced points on `[1e-6, 1e6]`.
pub fn log_grid() -> Vec<f64> {
    const N: usize = 64;
    (0..N)
        .map(|k| 10f64.powf(-6.0 + 12.0 * k as f64 / (N - 1) as f64))
        .collect()
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(EndowError::InvalidInput(format!("{name} must be positive, got {v}")))
    }
}

/// `V(y)`.
pub fn conjugate(u: &dyn Utility, y: f64) -> Result<f64> {
    positive("y", y)?;
    Ok(u.conjugate(y))
}

/// `I(y)`.
pub fn inverse_marginal(u: &dyn Utility, y: f64) -> Result<f64> {
    positive("y", y)?;
    Ok(u.inverse_marginal(y))
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_section(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..200 {
        if (hi - lo).abs() <= tol {
            break;
        }
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    if fa <= fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

/// `|U(x) - inf_y {V(y) + x y}|` with the infimum located on the log grid and
/// refined by golden section in `ln y`.
pub fn bidual_check(u: &dyn Utility, x: f64) -> Result<f64> {
    positive("x", x)?;
    let phi = |t: f64| {
        let y = t.exp();
        u.conjugate(y) + x * y
    };
    let grid: Vec<f64> = log_grid().iter().map(|y| y.ln()).collect();
    let (k, _) = grid
        .iter()
        .enumerate()
        .map(|(k, &t)| (k, phi(t)))
        .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
    let step = grid[1] - grid[0];
    let lo = grid[k] - step;
    let hi = grid[k] + step;
    let (_, best) = golden_section(lo, hi, 1e-12, phi);
    Ok((u.value(x) - best).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Elasticity {
    /// Exact value for families that have one, otherwise the sampled ratio.
    pub value: f64,
    pub exact: Option<f64>,
    /// `x U'(x) / U(x)` at `x = 1e6`.
    pub sampled: f64,
}

impl Elasticity {
    pub fn below_one(&self) -> bool {
        self.value < 1.0
    }
}

pub fn asymptotic_elasticity(u: &dyn Utility) -> Elasticity {
    let x = 1e6;
    let sampled = x * u.marginal(x) / u.value(x);
    let exact = u.exact_asymptotic_elasticity();
    Elasticity {
        value: exact.unwrap_or(sampled),
        exact,
        sampled,
    }
}

/// Constants `(c1, c2)` with `V(y / c) <= c1 V(y) + c2` for all `y > 0`,
/// available for the shipped families with elasticity below one.
pub fn conjugate_growth_constants(spec: &UtilitySpec, c: f64) -> Result<(f64, f64)> {
    positive("c", c)?;
    Ok(match *spec {
        // V(y/c) = V(y) + ln c
        UtilitySpec::Log => (1.0, c.ln().max(0.0)),
        // V(y/c) = c^{gamma/(1-gamma)} V(y) and V > 0
        UtilitySpec::Power { gamma } => (c.powf(gamma / (1.0 - gamma)), 0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilityCheck {
    pub name: &'static str,
    pub passed: bool,
    pub worst: f64,
}

/// Sampled invariant suite over [`log_grid`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilityReport {
    pub label: String,
    pub checks: Vec<UtilityCheck>,
}

impl UtilityReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn check_invariants(u: &dyn Utility) -> UtilityReport {
    let grid = log_grid();
    let mut checks = Vec::new();

    let increasing = grid.windows(2).all(|w| u.value(w[1]) > u.value(w[0]))
        && grid.iter().all(|&x| u.marginal(x) > 0.0);
    checks.push(UtilityCheck {
        name: "strictly increasing",
        passed: increasing,
        worst: grid.iter().map(|&x| u.marginal(x)).fold(f64::INFINITY, f64::min),
    });

    let concave = grid.windows(2).all(|w| u.marginal(w[1]) < u.marginal(w[0]))
        && grid.iter().all(|&x| u.curvature(x) < 0.0);
    checks.push(UtilityCheck {
        name: "strictly concave",
        passed: concave,
        worst: grid.iter().map(|&x| u.curvature(x)).fold(f64::NEG_INFINITY, f64::max),
    });

    let first = u.marginal(grid[0]);
    let last = u.marginal(grid[grid.len() - 1]);
    let mid = u.marginal(1.0);
    checks.push(UtilityCheck {
        name: "inada",
        passed: first > mid && mid > last && last > 0.0,
        worst: last / first,
    });

    let slope_err = grid
        .iter()
        .map(|&y| (u.conjugate_slope(y) + u.inverse_marginal(y)).abs() / (1.0 + u.inverse_marginal(y)))
        .fold(0.0, f64::max);
    checks.push(UtilityCheck {
        name: "conjugate slope",
        passed: slope_err <= 1e-10,
        worst: slope_err,
    });

    let inverse_err = grid
        .iter()
        .map(|&y| (u.marginal(u.inverse_marginal(y)) - y).abs() / y)
        .fold(0.0, f64::max);
    checks.push(UtilityCheck {
        name: "inverse marginal",
        passed: inverse_err <= 1e-10,
        worst: inverse_err,
    });

    let fenchel_err = grid
        .iter()
        .map(|&x| {
            let y = u.marginal(x);
            (u.conjugate(y) + x * y - u.value(x)).abs() / (1.0 + u.value(x).abs())
        })
        .fold(0.0, f64::max);
    checks.push(UtilityCheck {
        name: "fenchel equality",
        passed: fenchel_err <= 1e-10,
        worst: fenchel_err,
    });

    UtilityReport {
        label: u.label(),
        checks,
    }
}
