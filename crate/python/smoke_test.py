"""Smoke test for the endow extension module.

Build and install first:

    pip install --no-build-isolation -e crates/python

then run `python python/smoke_test.py`. Exits non-zero on the first failure.
"""

import math
import sys

import endow


def close(a, b, tol, what):
    if not abs(a - b) <= tol:
        raise AssertionError(f"{what}: got {a!r}, want {b!r} (tol {tol})")


def main():
    b = endow.Market.builtin("b")
    print(b, "complete:", b.is_complete())

    s = endow.Solver(b, endow.Utility.log())
    r = s.solve(1.0, [1.0])
    close(r["primal"]["value"], math.log(2) / 3, 1e-9, "trinomial value")
    close(r["dual"]["y"], 5 / 6, 1e-8, "dual y")
    assert r["certificate"]["passed"], r["certificate"]["failures"]

    p = s.utility_price(1.0, [1.0])[0]
    lo, hi = b.price_bounds()[0]
    close(p, 0.2, 1e-8, "utility price")
    assert lo <= p <= hi
    assert b.in_price_set([p])["member"]

    a = endow.Market.builtin("a")
    for x, q in [(1.0, 0.0), (2.0, 0.5), (1.0, -1.0)]:
        v = endow.Solver(a, "power:0.5").solve_primal(x, [q])["value"]
        w = endow.Solver(a, "power:0.5").value_w(x + q / 3)
        close(v, w, 1e-9, f"complete-market collapse at ({x}, {q})")

    try:
        endow.Solver(b).solve(1 / 3, [-1.0])
    except endow.NotInKError:
        pass
    else:
        raise AssertionError("boundary portfolio was accepted")

    g = endow.Market.generate(seed=7, branches=4, periods=2, assets=2, claims=2)
    gap = endow.Solver(g, "log").conjugacy_gap(1.0, [0.1, -0.1])
    print("generated", g, "gap", gap["gap"])
    assert abs(gap["gap"]) <= 1e-7

    print("endow", endow.__version__, "smoke test passed")


if __name__ == "__main__":
    try:
        main()
    except AssertionError as e:
        print("FAILED:", e, file=sys.stderr)
        sys.exit(1)
