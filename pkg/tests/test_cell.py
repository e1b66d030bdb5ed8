import numpy as np
import pytest

from homogelast import tensor as T
from homogelast.cell import (CellOptions, TrustRegionExceeded, euler_lagrange_residual, multi_cell,
                             solve_corrector, solve_flux_corrector, solve_linearized)
from homogelast.fem import PeriodicGrid

F0 = np.array([[1.0, 0.0], [0.04, 1.0]])


@pytest.fixture(scope="module")
def sol(smooth):
    model, cb = smooth
    return solve_corrector(model, cb, F0, PeriodicGrid(16))


def test_corrector_converges(sol, smooth):
    model, _ = smooth
    assert sol.residual <= 1e-10
    assert sol.route == "fast"
    assert sol.max_dist < smooth[1].match_radius
    assert np.abs(sol.phi.mean(axis=(0, 1))).max() < 1e-12
    assert euler_lagrange_residual(model, sol) < 1e-9


def test_rotation_gives_zero(smooth):
    model, cb = smooth
    s = solve_corrector(model, cb, T.rotation(0.4), PeriodicGrid(8))
    assert abs(s.w_energy) < 1e-12
    assert np.abs(s.phi).max() < 1e-10


def test_frame_indifference_of_corrector(smooth, sol):
    model, cb = smooth
    R = T.rotation(1.1)
    s = solve_corrector(model, cb, R @ F0, PeriodicGrid(16))
    assert np.isclose(s.w_energy, sol.w_energy, rtol=1e-10)
    assert np.allclose(s.phi, sol.phi @ R.T, atol=1e-9)


def test_containment_check(smooth):
    model, cb = smooth
    F = np.eye(2) + np.diag([0.3, -0.2])
    with pytest.raises(TrustRegionExceeded):
        solve_corrector(model, cb, F, PeriodicGrid(8), CellOptions(convex_fallback=False))


def test_flux_corrector_algebra(sol):
    s = solve_flux_corrector(sol)
    assert np.allclose(s.sigma, -np.swapaxes(s.sigma, -1, -2))
    assert s.sigma_residual < 0.01


def test_linearized_symmetric(sol, smooth):
    model, _ = smooth
    G = np.array([[0.0, 1.0], [0.0, 0.0]])
    H = np.array([[1.0, 0.0], [0.0, -1.0]])
    a = solve_linearized(model, sol, G)
    b = solve_linearized(model, sol, H)
    g = sol.grid()
    L = model.d2w_a(model.stiffness(g.quad_points()), sol.F + sol.grad_phi)
    ga, gb = G + g.grad(a.dphi), H + g.grad(b.dphi)
    ab = g.integrate(np.einsum("...abcd,...ab,...cd->...", L, ga, gb))
    ba = g.integrate(np.einsum("...abcd,...ab,...cd->...", L, gb, ga))
    assert np.isclose(ab, ba)


def test_multi_cell_agrees(sol, smooth):
    model, cb = smooth
    res = multi_cell(model, cb, F0, 8, 2, n_starts=2, seed=0, amplitude=1e-3)
    one = solve_corrector(model, cb, F0, PeriodicGrid(8))
    assert abs(res.energy - one.w_energy) <= 1e-5 * one.w_energy


def test_export(sol, tmp_path):
    sol.export(str(tmp_path / "c"))
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "i,j,phi_1,phi_2"
    assert len(lines) == 1 + 16 * 16
