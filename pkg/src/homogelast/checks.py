"""Acceptance checks 1-11, shared by ``homogelast verify`` and the test suite.

Each check returns a :class:`CheckResult`; sizes are keyword arguments so the
unit tests can run reduced versions of the same code.
"""

import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .cell import CellOptions, solve_corrector, solve_flux_corrector
from .convexify import CalibrationRecord, bound_from_record, build_bound, calibrate, verify_matching
from .energy import DensityParams, make_layered, make_well_density
from .fem import PeriodicGrid
from .homogenize import (d2w_hom, dw_hom, homogenized_point, rank_one_certificate,
                         single_vs_multicell, w_hom)
from .layered import solve_layered
from .macro import LoadData, error_study, fit_slope, solve_hom

log = logging.getLogger(__name__)

MODELS = {
    "smooth": lambda: make_well_density(DensityParams()),
    "layered": lambda: make_layered([0.0, 0.5, 1.0], [1.0, 4.0]),
    "layered-mild": lambda: make_layered([0.0, 0.5, 1.0], [1.0, 2.0]),
    "homogeneous": lambda: make_well_density(DensityParams(), 1.0),
}


@dataclass
class CheckResult:
    criterion: int
    name: str
    passed: bool
    value: float
    tolerance: float
    details: dict = field(default_factory=dict)
    runtime: float = 0.0

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] criterion {self.criterion:2d} {self.name}: value={self.value:.3e} "
                f"tol={self.tolerance:.1e} ({self.runtime:.1f} s)")

    def to_dict(self):
        return _plain(asdict(self))


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


class Context:
    """Models and calibrated bounds, built once and optionally cached as JSON."""

    def __init__(self, cache_dir=None, seed=0):
        self.cache_dir = cache_dir
        self.seed = seed
        self._models = {}
        self._bounds = {}

    def model(self, name):
        if name not in self._models:
            self._models[name] = MODELS[name]()
        return self._models[name]

    def bound(self, name):
        if name in self._bounds:
            return self._bounds[name]
        model = self.model(name)
        path = os.path.join(self.cache_dir, f"calibration-{name}.json") if self.cache_dir else None
        if path and os.path.exists(path):
            with open(path) as fh:
                rec = CalibrationRecord.from_json(fh.read())
            cb = bound_from_record(model, rec)
        else:
            rec = calibrate(model, seed=self.seed)
            cb = build_bound(model, rec)
            if path:
                os.makedirs(self.cache_dir, exist_ok=True)
                with open(path, "w") as fh:
                    fh.write(rec.to_json())
        self._bounds[name] = cb
        return cb


def _timed(fn):
    def run(*args, **kw):
        t0 = time.time()
        res = fn(*args, **kw)
        res.runtime = time.time() - t0
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def sample_strained(rng, n, radius):
    """``F = R (I + S)`` with symmetric ``S``, ``|S| <= radius``; then ``dist_SO(F) = |S|``."""
    A = rng.normal(size=(n, 2, 2))
    S = 0.5 * (A + np.swapaxes(A, 1, 2))
    S /= T.frob(S)[:, None, None]
    S *= radius * rng.uniform(size=n)[:, None, None] ** (1 / 3)
    return T.random_rotation(rng, 2, size=n) @ (np.eye(2) + S)


# -- 1 --------------------------------------------------------------------------

@_timed
def rotation_nullity(ctx, model="smooth", n=32, n_rot=16, seed=0):
    cb = ctx.bound(model)
    m = ctx.model(model)
    rng = np.random.default_rng(seed)
    h1, w = [], []
    for R in T.random_rotation(rng, 2, size=n_rot):
        sol = solve_corrector(m, cb, R, PeriodicGrid(n))
        h1.append(sol.h1_norm())
        w.append(abs(sol.w_energy))
    ok = max(h1) <= 1e-9 and max(w) <= 1e-10
    return CheckResult(1, "rotation nullity", ok, max(max(h1), max(w)), 1e-10,
                       {"max_h1": max(h1), "max_w_hom": max(w), "n": n})


# -- 2 --------------------------------------------------------------------------

@_timed
def single_vs_multi(ctx, models=("layered", "smooth"), n_per_model=10, n=32, k_list=(2, 3),
                    n_starts=8, radius=0.05, seed=0, amplitude=2e-3):
    rng = np.random.default_rng(seed)
    worst, rows = 0.0, []
    for name in models:
        m, cb = ctx.model(name), ctx.bound(name)
        for F in sample_strained(rng, n_per_model, radius):
            rep = single_vs_multicell(m, cb, F, n, k_list, n_starts=n_starts,
                                      seed=int(rng.integers(1 << 30)), amplitude=amplitude)
            r = max(rep["relative_gaps"].values())
            worst = max(worst, r)
            rows.append({"model": name, "dist_SO": float(T.dist_SO(F)), "relative_gap": r,
                         "energy_1": rep["energies"][1]})
    return CheckResult(2, "single- vs multi-cell", worst <= 1e-5, worst, 1e-5, {"rows": rows})


# -- 3 --------------------------------------------------------------------------

def _fd_gradient(m, cb, F, n, h):
    g = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            E = np.zeros((2, 2))
            E[i, j] = h
            g[i, j] = (w_hom(m, cb, F + E, n).w_hom - w_hom(m, cb, F - E, n).w_hom) / (2 * h)
    return g


def _fd_hessian(m, cb, F, n, h):
    B = np.eye(4).reshape(4, 2, 2)
    H = np.zeros((4, 4))
    w = {}

    def val(E):
        key = tuple(np.round(E.ravel() / h).astype(int))
        if key not in w:
            w[key] = w_hom(m, cb, F + E, n).w_hom
        return w[key]

    for a in range(4):
        for b in range(a, 4):
            Ea, Eb = h * B[a], h * B[b]
            H[a, b] = H[b, a] = (val(Ea + Eb) - val(Ea - Eb) - val(Eb - Ea) + val(-Ea - Eb)) / (4 * h * h)
    return H.reshape(2, 2, 2, 2)


@_timed
def derivative_formulas(ctx, model="smooth", n=16, n_F=10, radius=0.05, seed=0):
    m, cb = ctx.model(model), ctx.bound(model)
    rng = np.random.default_rng(seed)
    e1 = e2 = route = 0.0
    for F in sample_strained(rng, n_F, radius):
        p = homogenized_point(m, cb, F, n)
        g = _fd_gradient(m, cb, F, n, 1e-4)
        H = _fd_hessian(m, cb, F, n, 1e-3)
        e1 = max(e1, float(np.max(np.abs(g - p.dw_hom)) / np.max(np.abs(p.dw_hom))))
        e2 = max(e2, float(np.max(np.abs(H - p.d2w_hom)) / np.max(np.abs(p.d2w_hom))))
        route = max(route, p.route_gap)
    ok = e1 <= 1e-4 and e2 <= 1e-3 and route <= 1e-8
    return CheckResult(3, "derivative formulas", ok, max(e1 / 1e-4, e2 / 1e-3, route / 1e-8), 1.0,
                       {"dw_rel": e1, "d2w_rel": e2, "route_gap": route})


# -- 4 --------------------------------------------------------------------------

@_timed
def matching_bound(ctx, model="smooth", n_samples=10000, seed=0):
    cb = ctx.bound(model)
    rep = verify_matching(cb, ctx.model(model), n_samples=n_samples, seed=seed)
    return CheckResult(4, "matching convex bound", rep.passed, rep.max_match_err, 1e-8,
                       {"max_excess": rep.max_excess, "violations": rep.n_violations,
                        "midpoint_margin": rep.midpoint_margin, "lambda/8": rep.lam / 8})


# -- 5 --------------------------------------------------------------------------

@_timed
def null_lagrangian(ctx=None, n=16, n_fields=100, seed=0):
    rng = np.random.default_rng(seed)
    g = PeriodicGrid(n)
    worst = 0.0
    for _ in range(n_fields):
        F = rng.normal(size=(2, 2))
        phi = rng.normal(size=(g.nn, g.nn, 2)) * g.h
        val = g.integrate(T.det(F + g.grad(phi))) / g.volume()
        worst = max(worst, abs(val - T.det(F)))
    return CheckResult(5, "null-Lagrangian exactness", worst <= 1e-12, worst, 1e-12)


# -- 6 --------------------------------------------------------------------------

@_timed
def layered_oracle(ctx, model="layered", ns=(16, 32, 64, 128), F=None):
    m, cb = ctx.model(model), ctx.bound(model)
    F = np.array([[1.0, 0.0], [0.05, 1.0]]) if F is None else F
    ex = solve_layered(m, F, cb.mu)
    errs, sig = [], []
    opts = CellOptions(gtol=1e-12)
    for n in ns:
        g = PeriodicGrid(n)
        sol = solve_corrector(m, cb, F, g, opts)
        d = sol.grad_phi - ex.grad_phi(g.quad_points()[..., 0], m)
        dp = g.values(sol.phi) - ex.phi(g.quad_points()[..., 0])
        errs.append(float(np.sqrt(g.integrate(np.sum(d ** 2, (-2, -1)) + np.sum(dp ** 2, -1)))))
        solve_flux_corrector(sol)
        sig.append(float(np.max(np.abs(sol.sigma))))
    rate = fit_slope([1 / n for n in ns], errs)[0] if min(errs) > 0 else np.inf
    exact = max(errs) <= 1e-8
    rate_ok = rate >= 0.9 or exact
    flux_ok = ex.flux_residual <= 1e-10
    sigma_ok = max(sig) <= 1e-8
    return CheckResult(6, "layered oracle agreement", rate_ok and flux_ok and sigma_ok, max(sig), 1e-8,
                       {"h1_errors": errs, "fitted_rate": rate, "exact_reproduction": exact,
                        "flux_residual": ex.flux_residual, "sigma_max": sig,
                        "rate_ok": rate_ok, "flux_ok": flux_ok, "sigma_ok": sigma_ok})


# -- 7 --------------------------------------------------------------------------

@_timed
def flux_corrector_algebra(ctx, model="smooth", ns=(16, 32, 64, 128), F=None):
    m, cb = ctx.model(model), ctx.bound(model)
    F = np.array([[1.03, 0.01], [-0.02, 0.98]]) if F is None else F
    res, anti = [], 0.0
    for n in ns:
        sol = solve_flux_corrector(solve_corrector(m, cb, F, PeriodicGrid(n)))
        anti = max(anti, float(np.max(np.abs(sol.sigma + np.swapaxes(sol.sigma, -1, -2)))))
        res.append(sol.sigma_residual)
    rate = fit_slope([1 / n for n in ns], res)[0]
    ok = anti <= 1e-15 and rate >= 1.0
    return CheckResult(7, "flux-corrector algebra", ok, rate, 1.0,
                       {"antisymmetry": anti, "residuals": res, "fitted_rate": rate,
                        "constant": float(np.max(np.array(res) * np.array(ns)))})


# -- 8 --------------------------------------------------------------------------

@_timed
def rank_one(ctx, model="smooth", n=16, n_F=20, radius=0.05, seed=0):
    m, cb = ctx.model(model), ctx.bound(model)
    c_id = rank_one_certificate(homogenized_point(m, cb, np.eye(2), n).d2w_hom)[0]
    rng = np.random.default_rng(seed)
    cs = []
    for F in sample_strained(rng, n_F, radius):
        p = w_hom(m, cb, F, n)
        d2w_hom(m, cb, F, n, point=p)
        cs.append(rank_one_certificate(p.d2w_hom)[0])
    p = homogenized_point(m, cb, np.eye(2), n)
    c, a, b = rank_one_certificate(p.d2w_hom)
    ab = np.outer(a, b)
    bad = p.d2w_hom - 10 * c_id * np.einsum("ij,kl->ijkl", ab, ab)
    detected = rank_one_certificate(bad)[0] < 0
    ok = min(cs) >= 0.05 * c_id and detected
    return CheckResult(8, "rank-one certificate", ok, min(cs) / c_id, 0.05,
                       {"c_identity": c_id, "min_c": min(cs), "negative_control_detected": detected})


# -- 9 --------------------------------------------------------------------------

@_timed
def two_scale_rate(ctx, model="layered", eps_list=(1 / 8, 1 / 16, 1 / 32, 1 / 64), load=None,
                   cells_per_period=16):
    m, cb = ctx.model(model), ctx.bound(model)
    load = load or LoadData(force=(0.0, -0.02))
    rep = error_study(m, cb, load, eps_list, cells_per_period=cells_per_period,
                      progress=lambda r: log.info("eps=%g err_H1=%.4e", r["eps"], r["err_H1"]))
    ok = rep.complete and 0.35 <= rep.slope_H1 <= 0.75 and rep.monotone_H1()
    return CheckResult(9, "two-scale rate", ok, rep.slope_H1, 0.35,
                       {"rows": rep.rows, "slope_H1": rep.slope_H1, "slope_L2": rep.slope_L2,
                        "monotone": rep.monotone_H1(), "lambda": rep.lam, "window": [0.35, 0.75]})


# -- 10 -------------------------------------------------------------------------

DUAL_ROUTE_LOADS = (
    LoadData(force=(0.0, -0.01)),
    LoadData(force=(0.01, 0.005)),
    LoadData(strain=((0.0, 0.01), (0.0, 0.0))),
    LoadData(force=(0.0, -0.01), theta=0.3, shift=(0.1, -0.2)),
    LoadData(strain=((0.005, 0.0), (0.0, -0.005)), force=(0.005, 0.0)),
)


@_timed
def dual_route(ctx, model="layered", m_cells=32, loads=DUAL_ROUTE_LOADS):
    m, cb = ctx.model(model), ctx.bound(model)
    gaps = [solve_hom(m, cb, ld, m_cells)[2] for ld in loads]
    return CheckResult(10, "dual-route macro consistency", max(gaps) <= 1e-8, max(gaps), 1e-8,
                       {"h1_gaps": gaps})


# -- 11 -------------------------------------------------------------------------

@_timed
def taylor_regularity(ctx, model="smooth", n=16, n_pairs=5, radius=0.02, g_norm=0.4, seed=0,
                      ts=tuple(np.logspace(-3, -1, 7))):
    # |G| = g_norm keeps F + t G inside the trust region up to t = 0.1
    m, cb = ctx.model(model), ctx.bound(model)
    rng = np.random.default_rng(seed)
    exps = []
    for F in sample_strained(rng, n_pairs, radius):
        G = rng.normal(size=(2, 2))
        G *= g_norm / T.frob(G)
        p = homogenized_point(m, cb, F, n)
        x0 = p.solution.phi.ravel()
        quad = T.apply4(p.d2w_hom, G)
        rem = []
        for t in ts:
            wt = w_hom(m, cb, F + t * G, n, x0=x0).w_hom
            rem.append(abs(wt - p.w_hom - t * T.inner(p.dw_hom, G) - 0.5 * t * t * quad))
        exps.append(fit_slope(ts, rem)[0])
    return CheckResult(11, "Taylor regularity", min(exps) >= 2.7, min(exps), 2.7, {"exponents": exps})


ALL = (rotation_nullity, single_vs_multi, derivative_formulas, matching_bound, null_lagrangian,
       layered_oracle, flux_corrector_algebra, rank_one, two_scale_rate, dual_route,
       taylor_regularity)


def run_all(ctx, only=None, overrides=None):
    """Run the checks (optionally a subset by criterion number) and return the results."""
    out = []
    overrides = overrides or {}
    for i, fn in enumerate(ALL, start=1):
        if only and i not in only:
            continue
        log.info("running criterion %d (%s)", i, fn.__name__)
        res = fn(ctx, **overrides.get(i, {}))
        log.info("%s", res.line())
        out.append(res)
    return out
