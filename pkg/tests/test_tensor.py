import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from homogelast import tensor as T

mats = arrays(np.float64, (2, 2), elements=st.floats(-3, 3))
angles = st.floats(0, 2 * np.pi)


@given(angles)
def test_rotation_is_orthogonal(th):
    R = T.rotation(th)
    assert np.allclose(R.T @ R, np.eye(2))
    assert np.isclose(T.det(R), 1.0)


@given(mats, angles)
def test_dist_so_invariant(F, th):
    R = T.rotation(th)
    assert np.isclose(T.dist_SO(R @ F), T.dist_SO(F), atol=1e-10)
    assert np.isclose(T.dist_SO(F @ R), T.dist_SO(F), atol=1e-10)


@given(mats)
def test_polar_rotation_is_closest(F):
    R = T.polar_rotation(F)
    th = np.linspace(0, 2 * np.pi, 721)
    assert T.frob(F - R) <= np.min(T.frob(F - T.rotation(th))) + 1e-12


def test_dist_of_symmetric_perturbation():
    S = np.array([[0.02, 0.01], [0.01, -0.03]])
    assert np.isclose(T.dist_SO(T.rotation(0.7) @ (np.eye(2) + S)), T.frob(S))


@given(mats, mats)
def test_cof_is_derivative_of_det(F, G):
    h = 1e-6
    fd = (T.det(F + h * G) - T.det(F - h * G)) / (2 * h)
    assert np.isclose(fd, T.inner(T.cof(F), G), atol=1e-7)


@given(mats, mats)
def test_d2det_exact(F, G):
    # det is quadratic in 2D, so the second-order expansion is exact
    lhs = T.det(F + G)
    rhs = T.det(F) + T.inner(T.cof(F), G) + 0.5 * T.apply4(T.d2det(F), G)
    assert np.isclose(lhs, rhs, atol=1e-9)


def test_d2det_3d_fd(rng):
    F = rng.normal(size=(3, 3))
    G = rng.normal(size=(3, 3))
    h = 1e-5
    fd = (T.cof(F + h * G) - T.cof(F - h * G)) / (2 * h)
    assert np.allclose(np.einsum("ijkl,kl->ij", T.d2det(F), G), fd, atol=1e-8)


def test_rank_one_min_identity():
    c, a, b = T.rank_one_min(T.identity4())
    assert np.isclose(c, 1.0)


def test_rank_one_min_value_is_attained(rng):
    A = rng.normal(size=(4, 4))
    Q = (A @ A.T).reshape(2, 2, 2, 2)
    c, a, b = T.rank_one_min(Q)
    assert np.isclose(T.apply4(Q, T.outer(a, b)), c)
    ang = np.linspace(0, np.pi, 181)
    u = np.stack([np.cos(ang), np.sin(ang)], -1)
    brute = min(T.apply4(Q, T.outer(x, y)) for x in u for y in u)
    assert c <= brute + 1e-12


def test_rank_one_detects_d2det():
    # D^2 det vanishes on every rank-one direction
    c, _, _ = T.rank_one_min(T.D2DET2)
    assert abs(c) < 1e-12
