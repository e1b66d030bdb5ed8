import numpy as np
import pytest

from homogelast import tensor as T
from homogelast.fem import DirichletGrid, PeriodicGrid


def test_affine_field_gradient():
    g = DirichletGrid(6)
    A = np.array([[0.3, -0.2], [0.5, 0.1]])
    u = g.nodes() @ A.T
    assert np.allclose(g.grad(u), A)


def test_periodic_integration_of_gradient_is_zero(rng):
    g = PeriodicGrid(8, 2)
    u = rng.normal(size=(g.nn, g.nn, 2))
    assert np.allclose(g.integrate(g.grad(u)), 0.0, atol=1e-12)


def test_det_null_lagrangian(rng):
    g = PeriodicGrid(8)
    F = np.eye(2) + 0.1 * rng.normal(size=(2, 2))
    u = 0.2 * rng.normal(size=(g.nn, g.nn, 2))
    gd = g.integrate(T.det(F + g.grad(u))) / g.volume()
    assert np.isclose(gd, T.det(F), atol=1e-13)


def test_hessvec_matches_assembly(rng):
    g = PeriodicGrid(5)
    A = rng.normal(size=(4, 4))
    L = np.broadcast_to((A @ A.T).reshape(2, 2, 2, 2), (g.ne, g.ne, 4, 2, 2, 2, 2))
    v = rng.normal(size=(g.nn, g.nn, 2))
    K = g.assemble(L)
    assert np.allclose(K @ v.ravel(), g.hessvec(L, v).ravel())


def test_fft_preconditioner_inverts_constant_operator(rng):
    g = PeriodicGrid(8)
    L0 = T.identity4() + 0.5 * T.D2DET2
    L = np.broadcast_to(L0, (g.ne, g.ne, 4, 2, 2, 2, 2))
    v = rng.normal(size=(g.nn, g.nn, 2))
    v -= v.mean(axis=(0, 1))
    P = g.fft_preconditioner(L0)
    assert np.allclose(P(g.hessvec(L, v)), v, atol=1e-10)


def test_laplace_preconditioner_exact(rng):
    g = DirichletGrid(7)
    L = np.broadcast_to(T.identity4(), (g.ne, g.ne, 4, 2, 2, 2, 2))
    K = g.assemble(L, free=g.free)
    x = rng.normal(size=K.shape[0])
    r = np.zeros((g.nn, g.nn, 2))
    r[g.free] = (K @ x).reshape(-1, 2)
    z = g.laplace_preconditioner(1.0)(r)
    assert np.allclose(z[g.free].ravel(), x, atol=1e-10)
    assert np.all(z[~g.free] == 0)


def test_grid_validation():
    with pytest.raises(ValueError):
        PeriodicGrid(2)
