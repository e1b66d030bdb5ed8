import numpy as np

from homogelast import checks
from homogelast import tensor as T


def test_sample_strained_distance(rng):
    F = checks.sample_strained(rng, 50, 0.05)
    d = T.dist_SO(F)
    assert np.all(d <= 0.05 + 1e-12) and np.all(d > 0)


def test_result_line_format():
    r = checks.CheckResult(5, "x", True, 1e-13, 1e-12, runtime=0.25)
    assert r.line() == "[PASS] criterion  5 x: value=1.000e-13 tol=1.0e-12 (0.2 s)"
    assert r.to_dict()["passed"] is True


def test_run_all_subset(ctx):
    res = checks.run_all(ctx, only={5}, overrides={5: {"n_fields": 5}})
    assert [r.criterion for r in res] == [5] and res[0].passed
