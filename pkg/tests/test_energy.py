import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from homogelast import tensor as T
from homogelast.energy import DensityParams, certify, make_layered, make_well_density

mats = arrays(np.float64, (2, 2), elements=st.floats(-2, 2))
model = make_well_density(DensityParams())


def test_params_validation():
    with pytest.raises(ValueError):
        DensityParams(alpha=0.0)
    with pytest.raises(ValueError):
        DensityParams(p=1.0)
    with pytest.raises(ValueError):
        make_layered([0.0, 0.6, 0.5], [1.0, 2.0])


@given(mats, st.floats(0, 2 * np.pi))
def test_frame_indifference(F, th):
    a = np.array(1.3)
    R = T.rotation(th)
    assert np.isclose(model.w_a(a, R @ F), model.w_a(a, F), rtol=1e-10, atol=1e-12)


def test_vanishes_on_rotations(rng):
    R = T.random_rotation(rng, 2, 20)
    assert np.allclose(model.w_a(np.ones(20), R), 0.0)
    assert np.allclose(model.dw_a(np.ones(20), R), 0.0, atol=1e-12)


@given(mats, mats)
def test_gradient_fd(F, G):
    # dist_SO has a kink where the conformal part (tr F, F21 - F12) vanishes
    assume(np.hypot(*T.conformal_part(F)) > 1e-2)
    a = np.array(2.0)
    h = 1e-6
    fd = (model.w_a(a, F + h * G) - model.w_a(a, F - h * G)) / (2 * h)
    assert np.isclose(fd, T.inner(model.dw_a(a, F), G), rtol=1e-5, atol=1e-6)


def test_hessian_fd(rng):
    a = np.array(1.0)
    for _ in range(20):
        F = np.eye(2) + 0.3 * rng.normal(size=(2, 2))
        G = rng.normal(size=(2, 2))
        h = 1e-6
        fd = (model.dw_a(a, F + h * G) - model.dw_a(a, F - h * G)) / (2 * h)
        an = np.einsum("ijkl,kl->ij", model.d2w_a(a, F), G)
        assert np.allclose(fd, an, rtol=1e-5, atol=1e-6)


def test_wbar_adds_det(rng):
    F = rng.normal(size=(5, 2, 2))
    a = np.ones(5)
    assert np.allclose(model.wbar_a(a, F, 1.5), model.w_a(a, F) + 1.5 * T.det(F))


def test_layered_phases():
    m = make_layered([0.0, 0.5, 1.0], [1.0, 4.0])
    y = np.array([[0.25, 0.3], [0.75, 0.9], [1.25, 0.0]])
    assert np.allclose(m.stiffness(y), [1.0, 4.0, 1.0])


def test_certify_passes():
    rep = certify(model, n_samples=300, seed=0)
    assert rep.passed, rep.margins
