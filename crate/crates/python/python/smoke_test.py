"""Smoke test for the compiled extension. Run after `maturin develop`."""

import math

import localpop


def main():
    truth, rows = localpop.simulate(n=60, k=6, p=0.1, epsilon=0.5, seed=3)
    assert len(truth) == 60 and len(rows) == 60
    assert all(len(row) == 60 and set(row) <= set("01*") for row in rows)
    assert localpop.simulate(n=60, k=6, p=0.1, epsilon=0.5, seed=3) == (truth, rows)

    rec = localpop.recommend(["1*0", "110", "011"], target=0, t=1)
    assert rec["column"] == 1
    assert rec["top"] == [1]
    assert rec["similarities"] == [0, 2, 0]

    est = localpop.estimate_ber(n=2, k=1, p=0.25, epsilon=0.5, t=1, trials=20000, seed=1, tie="random:1")
    exact = localpop.exact_ber(n=2, k=1, p=0.25, epsilon=0.5)
    assert est["ci_low"] <= exact <= est["ci_high"], (est, exact)

    assert math.isclose(localpop.lower_bound(0.2, 0.5), 1 / 17, rel_tol=1e-14)
    assert math.isclose(localpop.posterior_error(3, 1, 0.1), 0.01 / 0.82, rel_tol=1e-12)
    lo, hi = localpop.wilson_interval(0, 100)
    assert lo == 0.0 and 0.0 < hi < 0.1
    delta = localpop.separation_delta(0.3, 0.0)
    p1, p2 = localpop.chernoff(2000, 2, 1000, 0.3, 0.0, delta)
    assert 0.0 < p1 < 1.0 and 0.0 < p2 < 1.0

    try:
        localpop.simulate(n=10, k=3, p=0.1, epsilon=0.5, r=3)
    except ValueError as err:
        assert "n = r" in str(err)
    else:
        raise AssertionError("inconsistent shape accepted")
    try:
        localpop.recommend(["1*", "11"], target=0, t=1, tie="bogus")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown tie policy accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
