import numpy as np
import pytest

from homogelast import tensor as T
from homogelast.energy import make_layered
from homogelast.fem import DirichletGrid
from homogelast.layered import solve_layered
from homogelast.macro import (LoadData, check_eps_mesh, cutoff, fit_slope, h1_norm,
                              layered_corrector_values, smallness, solve_eps, solve_hom,
                              two_scale_expand)

model = make_layered([0.0, 0.5, 1.0], [1.0, 4.0])
MU = 1.7


def test_load_datum():
    ld = LoadData(theta=0.3, shift=(0.1, 0.2), strain=((0.01, 0.0), (0.0, 0.0)))
    x = np.array([[0.5, 0.25]])
    R = T.rotation(0.3)
    assert np.allclose(ld.g0(x), x @ R.T + [0.1, 0.2])
    assert np.allclose(ld.g(x) - ld.g0(x), [[0.005, 0.0]])


def test_smallness_of_rigid_load_is_zero():
    assert smallness(LoadData(theta=1.0)) == pytest.approx(0.0, abs=1e-10)
    assert smallness(LoadData(force=(0.0, 0.1))) == pytest.approx(0.1)


def test_cutoff():
    x = np.array([[0.5, 0.5], [0.01, 0.5], [0.5, 0.995]])
    eta, g = cutoff(x, 0.1)
    assert np.allclose(eta, [1.0, 0.1, 0.05])
    assert np.allclose(g[1], [10.0, 0.0])
    assert np.allclose(g[0], 0.0)


def test_fit_slope_exact():
    eps = np.array([0.5, 0.25, 0.125])
    s, r = fit_slope(eps, 3 * eps ** 0.5)
    assert s == pytest.approx(0.5)
    assert r < 1e-12


def test_eps_mesh_divisibility():
    check_eps_mesh(32, 1 / 8)
    with pytest.raises(ValueError):
        check_eps_mesh(20, 1 / 8)


def test_rigid_datum_is_exact():
    ld = LoadData(theta=0.4, shift=(0.1, 0.0))
    sw, sv, gap = solve_hom(model, None, ld, 8, mu=MU)
    g = ld.g(DirichletGrid(8).nodes())
    assert np.abs(sw.u - g).max() < 1e-10
    assert abs(sw.energy) < 1e-14


def test_dual_route():
    sw, sv, gap = solve_hom(model, None, LoadData(force=(0.0, -0.02)), 16, mu=MU)
    assert gap <= 1e-8
    assert sw.residual <= 1e-10


def test_layered_corrector_values_match_solver():
    F = np.array([[1.0, 0.0], [0.05, 1.0]])
    lc = solve_layered(model, F, MU)
    y = np.linspace(0, 1, 17)
    vals = layered_corrector_values(model, np.broadcast_to(F, (17, 2, 2)), y, MU)
    assert np.allclose(vals, lc.phi(y), atol=1e-12)


def test_eps_problem_and_expansion():
    ld = LoadData(force=(0.0, -0.02))
    sw, _, _ = solve_hom(model, None, ld, 32, both_routes=False, mu=MU)
    se = solve_eps(model, None, ld, 32, 0.25, mu=MU)
    ex = two_scale_expand(sw.u, model, None, 32, 0.25, mu=MU)
    g = DirichletGrid(32)
    assert np.abs(ex.v[~g.free] - sw.u[~g.free]).max() < 1e-14
    # the expansion is closer to the fine solution than the homogenized one
    assert h1_norm(g, se.u - ex.v) < h1_norm(g, se.u - sw.u)
