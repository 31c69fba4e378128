"""Smoke test for the `mdep` extension module.

Build first with `cargo build -p mdep-python --release`, then run
`python3 python/smoke_test.py [path/to/libmdep.so]`.
"""

import importlib.util
import math
import pathlib
import random
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load(path=None):
    if path is None:
        release = ROOT / "target" / "release"
        candidates = [release / name for name in ("libmdep.so", "libmdep.dylib", "mdep.dll")]
        path = next((p for p in candidates if p.exists()), None)
        if path is None:
            sys.exit("extension not built; run `cargo build -p mdep-python --release`")
    spec = importlib.util.spec_from_file_location("mdep", str(path))
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    mdep = load(sys.argv[1] if len(sys.argv) > 1 else None)
    rng = random.Random(3)

    # noiseless linear model: exact recovery
    x = [[rng.uniform(-2, 2), rng.uniform(-2, 2)] for _ in range(50)]
    y = [0.4 + a - b for a, b in x]
    fit = mdep.fit(y, x, seed=1)
    assert abs(fit.theta[0] - 1) < 1e-6 and abs(fit.theta[1] + 1) < 1e-6, fit
    assert abs(fit.intercept - 0.4) < 1e-6
    assert fit.objective < 1e-12 and fit.converged

    # dCov: zero for a constant, positive for dependence
    z = [[v] for v in range(20)]
    assert abs(mdep.dcov_sq([1.0] * 20, z)) < 1e-14
    assert mdep.dcov_sq([float(v * v) for v in range(20)], z) > 0

    # simulated IV sample: estimates near (1, -1), finite standard errors
    y, x, z = mdep.generate("lin-ii", 300, 5)
    fit = mdep.fit(y, x, z, seed=5)
    cov = mdep.covariance(y, x, fit.theta, z)
    assert all(math.isfinite(s) and s > 0 for s in cov["std_errors"])
    for est, truth, se in zip(fit.theta, (1.0, -1.0), cov["std_errors"]):
        assert abs(est - truth) < 4 * se, (est, se)
    coef, se = mdep.tsls(y, x, z)
    assert len(coef) == 3 and len(se) == 3
    ols_coef, _ = mdep.ols(y, x)
    assert len(ols_coef) == 3

    stat, p = mdep.relevance_test([row[1] for row in x], [[row[1]] for row in z], [[row[0]] for row in x], b=99, seed=2)
    assert stat > 0 and p < 0.05, (stat, p)
    stat, p = mdep.spec_test(y, x, fit.theta, z, b=99, seed=2)
    assert 0.0 <= p <= 1.0

    table = mdep.simulate("lin-i", 60, 10, 1)
    assert ("MDep", 0) in table and ("OLS", 1) in table
    assert table == mdep.simulate("lin-i", 60, 10, 1)

    try:
        mdep.fit(y, x, [[row[0]] for row in z])
    except mdep.MDepError as e:
        assert "order condition" in str(e)
    else:
        raise AssertionError("expected an identification error")

    print("mdep smoke test passed")


if __name__ == "__main__":
    main()
