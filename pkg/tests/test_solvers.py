import numpy as np
import pytest

from homogelast.solvers import NegativeCurvature, newton, pcg


def test_pcg_spd(rng):
    A = rng.normal(size=(30, 30))
    A = A @ A.T + 30 * np.eye(30)
    b = rng.normal(size=30)
    x, _ = pcg(lambda v: A @ v, b, rtol=1e-12)
    assert np.allclose(A @ x, b)


def test_pcg_negative_curvature():
    A = np.diag([1.0, -1.0])
    with pytest.raises(NegativeCurvature):
        pcg(lambda v: A @ v, np.ones(2))


def test_newton_quartic():
    f = lambda x: np.sum(x ** 4 + x ** 2)
    g = lambda x: 4 * x ** 3 + 2 * x
    solve = lambda x, gr: (-gr / (12 * x ** 2 + 2), 0)
    x, info = newton(f, g, solve, np.full(5, 2.0), gtol=1e-12)
    assert np.allclose(x, 0.0, atol=1e-10)
    assert info.residual <= 1e-12
