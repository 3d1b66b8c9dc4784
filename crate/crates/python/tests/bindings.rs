use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &str) {
    Python::attach(|py| {
        let m = PyModule::new(py, "endow").unwrap();
        endow_py::register(&m).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("endow", m).unwrap();
        globals.set_item("ARBITRAGE", concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/arbitrage.json")).unwrap();
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.display(py);
            panic!("python snippet failed: {e}");
        }
    });
}

#[test]
fn trinomial_solve_matches_closed_form() {
    run(r#"
import math
m = endow.Market.builtin("b")
assert (m.leaf_count, m.asset_count, m.claim_count) == (3, 1, 1)
assert not m.is_complete()
s = endow.Solver(m, "log")
r = s.solve(1.0, [1.0])
assert abs(r["primal"]["value"] - math.log(2) / 3) < 1e-9
assert abs(r["dual"]["y"] - 5 / 6) < 1e-8
assert r["certificate"]["passed"]
assert abs(s.utility_price(1.0, [1.0])[0] - 0.2) < 1e-8
lo, hi = m.price_bounds()[0]
assert abs(lo) < 1e-9 and abs(hi - 1 / 3) < 1e-9
"#);
}

#[test]
fn utility_objects_and_strings_agree() {
    run(r#"
m = endow.Market.builtin("a")
u = endow.Utility.power(0.5)
assert u.label == endow.Utility("power:0.5").label
a = endow.Solver(m, u).solve_primal(2.0, [0.5])["value"]
b = endow.Solver(m, "power:0.5").solve_primal(2.0, [0.5])["value"]
assert a == b
assert u.check_invariants()["checks"]
"#);
}

#[test]
fn errors_map_to_exception_classes() {
    run(r#"
m = endow.Market.builtin("b")
try:
    endow.Solver(m).solve(1 / 3, [-1.0])
    raise AssertionError("expected NotInKError")
except endow.NotInKError as e:
    assert isinstance(e, endow.EndowError)
try:
    endow.Utility("power:1.5")
    raise AssertionError("expected InvalidInputError")
except endow.InvalidInputError:
    pass
try:
    endow.Solver(endow.Market.load(ARBITRAGE)).solve(1.0)
    raise AssertionError("expected NoEmmError")
except endow.NoEmmError:
    pass
"#);
}

#[test]
fn generated_markets_round_trip() {
    run(r#"
g = endow.Market.generate(seed=42)
assert endow.Market.from_json(g.to_json()).to_json() == g.to_json()
assert g.find_arbitrage() is None
assert abs(sum(g.find_emm()["q"]) - 1) < 1e-12
"#);
}
