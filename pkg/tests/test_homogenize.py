import numpy as np
import pytest

from homogelast import tensor as T
from homogelast.fem import PeriodicGrid
from homogelast.homogenize import (dw_hom, homogenized_point, rank_one_certificate,
                                   single_vs_multicell, trust_radius, w_hom)
from homogelast.layered import layered_hom

F0 = np.array([[1.0, 0.0], [0.05, 1.0]])


def test_zero_on_rotations(smooth):
    model, cb = smooth
    assert abs(w_hom(model, cb, T.rotation(2.0), 8).w_hom) < 1e-14


def test_gradient_matches_fd(smooth, rng):
    model, cb = smooth
    G = rng.normal(size=(2, 2))
    G /= T.frob(G)
    h = 1e-5
    p = dw_hom(model, cb, F0, 12)
    fd = (w_hom(model, cb, F0 + h * G, 12).w_hom - w_hom(model, cb, F0 - h * G, 12).w_hom) / (2 * h)
    assert np.isclose(fd, T.inner(p.dw_hom, G), rtol=1e-6)


def test_hessian_routes_agree(smooth):
    model, cb = smooth
    p = homogenized_point(model, cb, F0, 12)
    assert p.route_gap < 1e-10
    assert p.null_lagrangian_gap < 1e-12
    assert np.allclose(p.d2w_hom, np.transpose(p.d2w_hom, (2, 3, 0, 1)))
    assert rank_one_certificate(p.d2w_hom)[0] > 0


def test_cell_matches_laminate_oracle(layered):
    model, cb = layered
    p = homogenized_point(model, cb, F0, PeriodicGrid(16))
    W, DW, D2W, _ = layered_hom(model, F0, cb.mu)
    assert abs(p.w_hom - W) <= 1e-8
    assert np.abs(p.dw_hom - DW).max() <= 1e-8
    assert np.abs(p.d2w_hom.reshape(4, 4) - D2W.reshape(4, 4)).max() <= 1e-6


def test_single_vs_multicell(smooth):
    model, cb = smooth
    rep = single_vs_multicell(model, cb, F0, 8, k_list=(2,), n_starts=2, amplitude=1e-3)
    assert rep["relative_gaps"][2] <= 1e-5


def test_trust_radius_positive(smooth):
    model, cb = smooth
    r = trust_radius(model, cb, n=8, radii=(0.01, 0.02), n_dirs=2)
    assert r == pytest.approx(0.02)
