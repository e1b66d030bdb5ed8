import numpy as np
import pytest

from homogelast import tensor as T
from homogelast.convexify import (CalibrationError, CalibrationRecord, bound_from_record, calibrate,
                                  verify_matching)
from homogelast.energy import DensityParams, make_well_density


def test_calibration_record_roundtrip(smooth):
    _, cb = smooth
    rec = CalibrationRecord.from_json(cb.record.to_json())
    assert rec.to_json() == cb.record.to_json()
    assert rec.lam >= 0.05


def test_calibration_rejects_mu_zero():
    model = make_well_density(DensityParams())
    with pytest.raises(CalibrationError) as exc:
        calibrate(model, mu_grid=(0.0,), delta_grid=(0.1,))
    assert exc.value.margins


def test_v_matches_wbar_near_rotations(smooth, rng):
    model, cb = smooth
    F = T.random_rotation(rng, 2, 200) + 0.5 * cb.match_radius * rng.normal(size=(200, 2, 2)) / 2
    F = F[T.dist_SO(F) < cb.match_radius]
    y = rng.uniform(size=(len(F), 2))
    V, DV = cb.eval_V(y, F, order=1)
    assert np.allclose(V, model.Wbar(y, F, cb.mu), atol=1e-10)


def test_v_below_wbar_and_convex(smooth):
    model, cb = smooth
    rep = verify_matching(cb, model, n_samples=1000, n_pairs=200, seed=3)
    assert rep.passed, rep


def test_v_gradient_fd(smooth, rng):
    _, cb = smooth
    F = 2.0 * rng.normal(size=(10, 2, 2))
    y = rng.uniform(size=(10, 2))
    G = rng.normal(size=(10, 2, 2))
    h = 1e-6
    Vp, _ = cb.eval_V(y, F + h * G, order=1)
    Vm, _ = cb.eval_V(y, F - h * G, order=1)
    _, DV = cb.eval_V(y, F, order=1)
    assert np.allclose((Vp - Vm) / (2 * h), T.inner(DV, G), rtol=1e-5, atol=1e-6)


def test_bound_from_record_reproduces(smooth, rng):
    model, cb = smooth
    cb2 = bound_from_record(model, cb.record)
    F = rng.normal(size=(20, 2, 2))
    y = rng.uniform(size=(20, 2))
    assert np.allclose(cb.eval_V(y, F, 1)[0], cb2.eval_V(y, F, 1)[0])
