import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from homogelast import tensor as T
from homogelast.energy import make_layered
from homogelast.layered import layered_hom, solve_layered

model = make_layered([0.0, 0.5, 1.0], [1.0, 4.0])
F0 = np.array([[1.0, 0.0], [0.05, 1.0]])


def test_slopes_average_to_zero():
    lc = solve_layered(model, F0, 1.7)
    w = np.diff(lc.breakpoints)
    assert np.allclose(w @ lc.slopes, 0.0, atol=1e-14)
    assert lc.residual < 1e-12


def test_normal_flux_continuous():
    # the traction across interfaces is continuous
    lc = solve_layered(model, F0, 1.7)
    assert lc.flux_residual < 1e-12


def test_phi_periodic_and_continuous():
    lc = solve_layered(model, F0)
    assert np.allclose(lc.phi(np.array([0.0])), lc.phi(np.array([1.0])))
    y = np.array([0.5 - 1e-12, 0.5 + 1e-12])
    p = lc.phi(y)
    assert np.allclose(p[0], p[1], atol=1e-10)


def test_homogeneous_laminate_is_trivial():
    m = make_layered([0.0, 0.5, 1.0], [2.0, 2.0])
    lc = solve_layered(m, F0)
    assert np.allclose(lc.slopes, 0.0, atol=1e-12)


@given(st.floats(0, 2 * np.pi))
def test_frame_indifference(th):
    R = T.rotation(th)
    assert np.isclose(layered_hom(model, R @ F0, order=0)[0], layered_hom(model, F0, order=0)[0],
                      rtol=1e-10)


def test_derivatives_fd(rng):
    W, DW, D2W, _ = layered_hom(model, F0, 1.7)
    G = rng.normal(size=(2, 2))
    h = 1e-5
    Wp = layered_hom(model, F0 + h * G, 1.7, order=1)
    Wm = layered_hom(model, F0 - h * G, 1.7, order=1)
    assert np.isclose((Wp[0] - Wm[0]) / (2 * h), T.inner(DW, G), rtol=1e-6)
    d2 = np.einsum("abcd,cd->ab", D2W.reshape(2, 2, 2, 2), G)
    assert np.allclose((Wp[1] - Wm[1]) / (2 * h), d2, rtol=1e-5, atol=1e-8)


def test_mu_leaves_w_unchanged():
    a = layered_hom(model, F0, 0.0, order=0)[0]
    b = layered_hom(model, F0, 1.7, order=0)[0]
    assert np.isclose(a, b, rtol=1e-10)
