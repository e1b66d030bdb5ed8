"""Matching convex lower bound ``V <= W + mu det`` with equality near SO(2).

Construction (d = 2):

1. ``Wbar = W + mu det`` is strictly Legendre elliptic on ``U_{2 delta}`` for
   suitable ``mu``; :func:`calibrate` measures the ellipticity constant and a
   global Taylor remainder bound and fixes ``lambda``.
2. ``Vbar(F) = sup_{F0 in U_delta} Wbar(F0) + DWbar(F0)[F - F0] + lambda |F - F0|^2``.
   ``Wbar`` is invariant under ``F -> R F Q`` for rotations ``R, Q``, so for
   ``F`` outside ``U_delta`` the sup runs over the boundary points
   ``F0 = R(theta)(I + delta n)`` with ``n`` symmetric and of unit norm; the
   maximum over ``theta`` is explicit and the remaining maximum over
   ``n in S^2`` is solved by a sphere mesh plus Newton ascent.
3. The quadratic cap ``Vhat = max(Vbar, Q)`` with
   ``Q(F) = 3 lambda / 2 |F|^2 + min Vbar - C0`` is then mollified and glued
   back onto ``Vhat`` near SO(2) with a smooth cut-off in ``dist(F, SO(2))``.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import tensor as T
from .energy import sample_ball

# basis of symmetric 2x2 matrices, orthonormal in the Frobenius product
_NSYM = np.array([
    [[1.0, 0.0], [0.0, 0.0]],
    [[0.0, 0.0], [0.0, 1.0]],
    [[0.0, 2 ** -0.5], [2 ** -0.5, 0.0]],
])
_I2 = np.eye(2)


def fibonacci_sphere(n):
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    th = np.pi * (1.0 + 5 ** 0.5) * k
    return np.stack([r * np.cos(th), r * np.sin(th), z], axis=-1)


def stiffness_samples(model, n=5):
    """Representative stiffness values covering the range of ``a(y)``."""
    if model.kind == "layered":
        return np.unique(model.phase_stiffness * model._scale)
    if model.kind == "homogeneous":
        return np.array([model.phase_stiffness[0] * model._scale])
    g = (np.arange(128) + 0.5) / 128
    yy = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
    a = model.stiffness(yy)
    return np.linspace(a.min(), a.max(), n)


def smoothstep(t):
    """Quintic step (C^2) on [0, 1] with first and second derivatives."""
    t = np.clip(t, 0.0, 1.0)
    s = t ** 3 * (10 - 15 * t + 6 * t * t)
    ds = 30 * t * t * (1 - t) ** 2
    d2s = 60 * t * (1 - t) * (1 - 2 * t)
    return s, ds, d2s


def mollifier_nodes(n_axis=5, d=2):
    """Nodes and weights of the bump ``exp(-1/(1-|x|^2))`` on the unit ball of
    ``d x d`` matrices, from a midpoint tensor grid with ``n_axis`` points per axis."""
    g = -1.0 + (2 * np.arange(n_axis) + 1) / n_axis
    dim = d * d
    pts = np.stack(np.meshgrid(*([g] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    r2 = np.sum(pts ** 2, axis=1)
    keep = r2 < 1.0
    pts, r2 = pts[keep], r2[keep]
    w = np.exp(-1.0 / (1.0 - r2))
    return pts.reshape(-1, d, d), w / w.sum()


# -- calibration ---------------------------------------------------------------

@dataclass
class CalibrationRecord:
    mu: float
    delta: float
    lam: float
    kappa: float
    gamma: float
    seed: int
    cap_radius: float = float("nan")
    cap_offset: float = float("nan")
    mollify_width: float = float("nan")
    moll_const: float = float("nan")
    margins: dict = field(default_factory=dict)

    def to_json(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return json.dumps(d, indent=2, sort_keys=True, default=float)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["lam"] = d.pop("lambda")
        return cls(**d)


class CalibrationError(RuntimeError):
    def __init__(self, msg, margins):
        super().__init__(msg)
        self.margins = margins


def _disc(radius, n):
    """Polar grid on the closed disc of ``radius`` in the plane of stretches."""
    r = radius * np.sqrt(np.linspace(0.0, 1.0, n))
    phi = np.linspace(0.0, 2 * np.pi, 4 * n, endpoint=False)
    rr, pp = np.meshgrid(r, phi, indexing="ij")
    return np.stack([rr.ravel() * np.cos(pp.ravel()), rr.ravel() * np.sin(pp.ravel())], axis=-1)


def _diag(s):
    F = np.zeros(s.shape[:-1] + (2, 2))
    F[..., 0, 0] = 1.0 + s[..., 0]
    F[..., 1, 1] = 1.0 + s[..., 1]
    return F


def ellipticity(model, mu, radius, a_values, n=41):
    """Min eigenvalue of ``D^2 Wbar`` over ``cl U_radius``.

    The eigenvalues are invariant under ``F -> R F Q``, so it suffices to scan
    ``F0 = diag(1 + s1, 1 + s2)`` with ``|s| <= radius``.
    """
    s = _disc(radius, n)
    F0 = _diag(s)
    worst = np.inf
    for a in a_values:
        H = T.as_matrix(model.d2wbar_a(a, F0, mu))
        ev = np.linalg.eigvalsh(H)[:, 0]
        worst = min(worst, ev.min())
    return float(worst)


def taylor_gamma(model, mu, delta, a_values, rng, n_base=200, n_far=2000, radius=5.0, n_refine=3):
    """Sampled ``inf (Wbar(F) - Wbar(F0) - DWbar(F0)[F-F0]) / |F-F0|^2`` over
    ``F0 in cl U_delta`` and ``F`` in a ball, with local refinement of the worst pairs."""
    s = _disc(delta, 12)
    s = np.concatenate([s, rng.uniform(-delta, delta, size=(n_base, 2))])
    s = s[np.linalg.norm(s, axis=1) <= delta]
    F0 = _diag(s)
    Fs = np.concatenate([sample_ball(rng, n_far, radius),
                         _I2 + sample_ball(rng, n_far // 2, 3 * delta + 0.5),
                         -_I2 + sample_ball(rng, n_far // 4, 0.5)])

    def ratio(a, F0, F):
        D = F - F0
        den = np.sum(D * D, axis=(-2, -1))
        num = model.wbar_a(a, F, mu) - model.wbar_a(a, F0, mu) - T.inner(model.dwbar_a(a, F0, mu), D)
        return num / np.maximum(den, 1e-300)

    best = np.inf
    for a in a_values:
        W0 = model.wbar_a(a, F0, mu)
        D0 = model.dwbar_a(a, F0, mu)
        Wf = model.wbar_a(a, Fs, mu)
        D = Fs[None] - F0[:, None]
        den = np.sum(D * D, axis=(-2, -1))
        num = Wf[None] - W0[:, None] - np.einsum("bij,bfij->bf", D0, D)
        r = np.where(den > 1e-6, num / np.maximum(den, 1e-300), np.inf)
        order = np.argsort(r, axis=None)[:n_refine]
        for idx in order:
            i, j = np.unravel_index(idx, r.shape)
            x0 = np.concatenate([s[i], Fs[j].ravel()])

            def fun(x):
                si = x[:2]
                nrm = np.linalg.norm(si)
                if nrm > delta:
                    si = si * (delta / nrm)
                F = x[2:].reshape(2, 2)
                if np.sum((F - _diag(si)) ** 2) < 1e-8:
                    return 1e3
                return float(ratio(a, _diag(si), F))

            res = minimize(fun, x0, method="Nelder-Mead",
                           options={"maxiter": 3000, "xatol": 1e-9, "fatol": 1e-12})
            best = min(best, r[i, j], res.fun)
    return float(best)


MU_GRID = (0.5, 0.75, 1.0, 1.25, 1.5, 1.75)
DELTA_GRID = (0.05, 0.075, 0.1, 0.125)


def calibrate(model, mu_grid=MU_GRID, delta_grid=DELTA_GRID,
              seed=0, lambda_floor=0.05, safety=0.9):
    """Choose ``(mu, delta, lambda)``.

    For every grid pair, ``kappa`` is the minimal eigenvalue of ``D^2 Wbar``
    on ``U_{2 delta}`` and ``gamma`` the sampled global Taylor remainder
    constant over ``F0 in U_delta``; then ``lambda = safety * min(kappa/2, gamma)``.
    A pair passes if ``lambda >= lambda_floor``.  The chosen ``mu`` has the
    largest passing ``delta`` and, among those, the largest ``lambda``.
    """
    # D^2 Wbar and the Taylor remainder are affine in the stiffness, so the
    # extreme values of a(y) are the worst cases
    a_all = stiffness_samples(model)
    a_values = np.unique([a_all.min(), a_all.max()])
    rng = np.random.default_rng(seed)
    table = {}
    best = None
    for mu in mu_grid:
        for delta in delta_grid:
            kappa = ellipticity(model, mu, 2 * delta, a_values)
            # gamma only matters when kappa alone would pass
            if safety * kappa / 2 >= lambda_floor:
                gamma = taylor_gamma(model, mu, delta, a_values, rng)
            else:
                gamma = float("nan")
            lam = safety * min(kappa / 2, gamma) if gamma == gamma else safety * kappa / 2
            ok = bool(gamma == gamma and lam >= lambda_floor)
            table[f"mu={mu:g},delta={delta:g}"] = {
                "kappa": kappa, "gamma": gamma, "lambda": lam, "pass": ok}
            if ok:
                key = (delta, lam)
                if best is None or key > best[0]:
                    best = (key, mu, delta, lam, kappa, gamma)
    if best is None:
        worst = max(v["lambda"] for v in table.values())
        raise CalibrationError(
            f"no admissible (mu, delta) on the grid; best lambda {worst:.3g} < {lambda_floor}", table)
    _, mu, delta, lam, kappa, gamma = best
    return CalibrationRecord(mu=mu, delta=delta, lam=lam, kappa=kappa, gamma=gamma,
                             seed=seed, margins=table)


# -- the bound ---------------------------------------------------------------

class ConvexBound:
    """Evaluate ``Vbar``, the capped ``Vhat`` and the glued, mollified ``V``.

    Use :func:`build_bound` to construct one from a calibration record.
    """

    # V = Wbar exactly on U_{MATCH delta}; the cut-off blends up to U_{BLEND delta}
    MATCH = 0.75
    BLEND = 0.9

    def __init__(self, model, record, n_mesh=1200, n_axis=5):
        if model.d != 2:
            raise NotImplementedError("the convex bound is implemented for d = 2")
        self.model = model
        self.record = record
        self.mu = record.mu
        self.delta = record.delta
        self.lam = record.lam
        self._mesh = fibonacci_sphere(n_mesh)
        self._tables = self._boundary_tables(self._mesh)
        self.xi, self.wts = mollifier_nodes(n_axis)
        self._minvbar = {}
        self.R = record.cap_radius
        self.C0 = record.cap_offset
        self.eps = record.mollify_width
        self.C_eps = record.moll_const

    # boundary points F0 = I + delta n(u)
    def _F0(self, u):
        return _I2 + self.delta * np.einsum("...k,kij->...ij", u, _NSYM)

    def _boundary_tables(self, u):
        F0 = self._F0(u)
        m = self.model
        W1 = m.w_a(1.0, F0)
        DW1 = m.dw_a(1.0, F0)
        det = T.det(F0)
        c1 = W1 - T.inner(DW1, F0)
        c0 = -self.mu * det + self.lam * T.inner(F0, F0)
        P0 = self.mu * T.cof(F0) - 2 * self.lam * F0
        return c1, c0, DW1, P0

    def _local(self, a, u):
        """``c``, ``P`` and their derivatives in ``u`` (batched)."""
        m = self.model
        F0 = self._F0(u)
        DWb = m.dwbar_a(a, F0, self.mu)
        H = m.d2wbar_a(a, F0, self.mu)
        c = m.wbar_a(a, F0, self.mu) - T.inner(DWb, F0) + self.lam * T.inner(F0, F0)
        P = DWb - 2 * self.lam * F0
        HF = np.einsum("...ijkl,...kl->...ij", H, F0)
        dc = self.delta * np.einsum("...ij,kij->...k", 2 * self.lam * F0 - HF, _NSYM)
        HN = np.einsum("...ijkl,nkl->...nij", H, _NSYM)
        dP = self.delta * (HN - 2 * self.lam * _NSYM)
        return c, P, dc, dP

    def _value_grad(self, F, a, u):
        c, P, dc, dP = self._local(a, u)
        s = T.inner(F, P)
        t = T.inner(F, T.J2 @ P)
        mval = np.hypot(s, t)
        theta = np.arctan2(t, s)
        RA = T.rotation(theta)
        # d m / d u_k = <RA^T F, dP_k>
        RtF = np.swapaxes(RA, -1, -2) @ F
        dm = np.einsum("...ij,...kij->...k", RtF, dP)
        return c + mval, dc + dm, RA, P

    def _newton(self, F, a, u, H0=None, tol=1e-13, maxit=40, h=1e-5):
        """Batched Newton ascent for ``g(u) = c(u) + m(F P(u)^T)`` on the sphere.

        ``H0`` optionally supplies the Hessian in the tangent coordinates of
        the starting point (rows with NaN are recomputed); it is kept fixed
        over the iterations.  Returns the maximizers and the Hessians there.
        """
        u = u / np.linalg.norm(u, axis=-1, keepdims=True)
        n = len(u)
        Hk = np.full((n, 2, 2), np.nan) if H0 is None else H0.copy()
        active = np.ones(n, dtype=bool)
        for _ in range(maxit):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            Fi, ai, ui = F[idx], a[idx], u[idx]
            fgrad = self._tangent_fgrad(Fi, ai, ui)
            zero = np.zeros((len(idx), 2))
            g0, gx = fgrad(zero)
            scale = 1.0 + np.abs(g0)
            done = np.linalg.norm(gx, axis=-1) <= tol * scale
            Hs = Hk[idx]
            need = ~done & np.isnan(Hs).any(axis=(1, 2))
            if need.any():
                Hs[need] = self._fd_hessian(Fi[need], ai[need], ui[need], h)
                Hk[idx[need]] = Hs[need]
            go = ~done
            step = np.zeros((len(idx), 2))
            if go.any():
                ev, V = np.linalg.eigh(Hs[go])
                ev = np.minimum(ev, -1e-8 * scale[go, None])
                step[go] = -np.einsum("kab,kb,kcb,kc->ka", V, 1.0 / ev, V, gx[go])
            t1, t2 = _tangent_basis(ui)
            basis = np.stack([t1, t2], axis=-1)
            tstep = np.ones(len(idx))
            accepted = done.copy()
            unew = ui.copy()
            for _ in range(40):
                trial = ui + np.einsum("kab,kb->ka", basis, step * tstep[:, None])
                trial /= np.linalg.norm(trial, axis=-1, keepdims=True)
                gt = self._value_grad(Fi, ai, trial)[0]
                ok = (gt >= g0 - 1e-15 * scale) & ~accepted
                unew[ok] = trial[ok]
                accepted |= ok
                if accepted.all():
                    break
                tstep = np.where(accepted, tstep, 0.5 * tstep)
            stall = ~accepted | (np.linalg.norm(step, axis=-1) * tstep < 1e-15)
            moved = ~done & accepted
            u[idx] = unew
            # a fixed Hessian is only reused while the iterates stay put
            Hk[idx[moved & (np.linalg.norm(step, axis=-1) > 1e-4)]] = np.nan
            active[idx] = ~(done | stall)
        return u, Hk

    def _tangent_fgrad(self, F, a, u):
        t1, t2 = _tangent_basis(u)
        basis = np.stack([t1, t2], axis=-1)  # (K, 3, 2)

        def fgrad(x):
            v = u + np.einsum("kab,kb->ka", basis, x)
            nv = np.linalg.norm(v, axis=-1, keepdims=True)
            uu = v / nv
            g, gr, _, _ = self._value_grad(F, a, uu)
            # gradient of x -> g(normalize(u + B x))
            proj = gr - np.sum(gr * uu, axis=-1, keepdims=True) * uu
            return g, np.einsum("kab,ka->kb", basis, proj) / nv

        return fgrad

    def _fd_hessian(self, F, a, u, h=1e-5):
        fgrad = self._tangent_fgrad(F, a, u)
        zero = np.zeros((len(u), 2))
        H = np.empty((len(u), 2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            H[:, :, j] = (fgrad(zero + e)[1] - fgrad(zero - e)[1]) / (2 * h)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def _mesh_candidates(self, F, a, n_cand=2, sep=0.5):
        c1, c0, DW1, P0 = self._tables
        Ff = F.reshape(-1, 4)
        JDW1 = (T.J2 @ DW1).reshape(-1, 4)
        JP0 = (T.J2 @ P0).reshape(-1, 4)
        s = a[:, None] * (Ff @ DW1.reshape(-1, 4).T) + Ff @ P0.reshape(-1, 4).T
        t = a[:, None] * (Ff @ JDW1.T) + Ff @ JP0.T
        g = a[:, None] * c1[None] + c0[None] + np.hypot(s, t)
        first = np.argmax(g, axis=1)
        out = [self._mesh[first]]
        if n_cand > 1:
            far = self._mesh @ self._mesh[first].T  # (M, N)
            g2 = np.where(far.T < np.cos(sep), g, -np.inf)
            out.append(self._mesh[np.argmax(g2, axis=1)])
        return out

    def _solve(self, F, a, u0=None, H0=None, chunk=400):
        """Maximize over boundary points.

        Returns value, maximizer ``u``, optimal rotation, ``P(u)`` and the
        tangent Hessian at ``u`` (NaN where it was not formed)."""
        F = np.asarray(F, dtype=float).reshape(-1, 2, 2)
        a = np.broadcast_to(np.asarray(a, dtype=float), F.shape[:1]).copy()
        N = len(F)
        val = np.empty(N)
        U = np.empty((N, 3))
        RA = np.empty((N, 2, 2))
        P = np.empty((N, 2, 2))
        Hout = np.full((N, 2, 2), np.nan)
        for lo in range(0, N, chunk):
            sl = slice(lo, min(N, lo + chunk))
            Fc, ac = F[sl], a[sl]
            Hc = None
            if u0 is None:
                cands = self._mesh_candidates(Fc, ac)
            else:
                warm = u0[sl].copy()
                Hc = None if H0 is None else H0[sl]
                cold = np.isnan(warm).any(axis=1)
                cands = [warm]
                if cold.any():
                    mc = self._mesh_candidates(Fc[cold], ac[cold])
                    warm[cold] = mc[0]
                    second = warm.copy()
                    second[cold] = mc[1]
                    cands.append(second)
            best_v = np.full(len(Fc), -np.inf)
            best_u = np.empty((len(Fc), 3))
            best_H = np.full((len(Fc), 2, 2), np.nan)
            for uc in cands:
                uc, Hu = self._newton(Fc, ac, uc.copy(), H0=Hc)
                v = self._value_grad(Fc, ac, uc)[0]
                better = v > best_v
                best_v = np.where(better, v, best_v)
                best_u[better] = uc[better]
                best_H[better] = Hu[better]
                Hc = None
            v, _, R_, P_ = self._value_grad(Fc, ac, best_u)
            val[sl], U[sl], RA[sl], P[sl], Hout[sl] = v, best_u, R_, P_, best_H
        return val, U, RA, P, Hout

    # -- Vbar -------------------------------------------------------------------
    def _vbar_a(self, a, F, u0=None, H0=None):
        """``(Vbar, DVbar, u*, H*)`` for batched ``F`` and stiffness ``a``."""
        F = np.asarray(F, dtype=float).reshape(-1, 2, 2)
        a = np.broadcast_to(np.asarray(a, dtype=float), F.shape[:1]).copy()
        V = np.empty(len(F))
        DV = np.empty_like(F)
        U = np.full((len(F), 3), np.nan)
        H = np.full((len(F), 2, 2), np.nan)
        inside = T.dist_SO(F) < self.delta
        if inside.any():
            V[inside] = self.model.wbar_a(a[inside], F[inside], self.mu)
            DV[inside] = self.model.dwbar_a(a[inside], F[inside], self.mu)
        out = ~inside
        if out.any():
            val, u, RA, P, Hu = self._solve(F[out], a[out], None if u0 is None else u0[out],
                                            None if H0 is None else H0[out])
            V[out] = self.lam * T.inner(F[out], F[out]) + val
            DV[out] = 2 * self.lam * F[out] + RA @ P
            U[out] = u
            H[out] = Hu
        return V, DV, U, H

    def min_vbar(self, a):
        """``min Vbar = Vbar(0) = max_u c(u)`` (the minimum is at 0 by frame indifference)."""
        a = np.asarray(a, dtype=float)
        flat = np.ravel(a)
        new = np.array([x for x in np.unique(flat) if x not in self._minvbar])
        if new.size:
            vals = self._vbar_a(new, np.zeros((len(new), 2, 2)))[0]
            self._minvbar.update(zip(new.tolist(), vals.tolist()))
        out = np.array([self._minvbar[x] for x in flat.tolist()])
        return out.reshape(a.shape) if a.ndim else float(out[0])

    def eval_envelope(self, y, F):
        F = np.asarray(F, dtype=float)
        a = self.model.stiffness(np.broadcast_to(y, F.shape[:-2] + (2,)))
        V = self._vbar_a(np.ravel(a), F.reshape(-1, 2, 2))[0]
        return V.reshape(F.shape[:-2])

    # -- cap ------------------------------------------------------------------------
    def _q(self, a, F):
        mins = self.min_vbar(a)
        return 1.5 * self.lam * T.inner(F, F) + mins - self.C0, 3 * self.lam * F

    def _vhat_a(self, a, F, u0=None, H0=None):
        F = np.asarray(F, dtype=float).reshape(-1, 2, 2)
        a = np.broadcast_to(np.asarray(a, dtype=float), F.shape[:1]).copy()
        q, dq = self._q(a, F)
        V, DV = q.copy(), dq.copy()
        U = np.full((len(F), 3), np.nan)
        H = np.full((len(F), 2, 2), np.nan)
        near = T.frob(F) < self.R
        if near.any():
            vb, dvb, u, Hu = self._vbar_a(a[near], F[near], None if u0 is None else u0[near],
                                          None if H0 is None else H0[near])
            take = vb >= q[near]
            idx = np.flatnonzero(near)
            V[idx[take]] = vb[take]
            DV[idx[take]] = dvb[take]
            U[idx] = u
            H[idx] = Hu
        return V, DV, U, H

    # -- glued, mollified V ---------------------------------------------------
    def _rho(self, F):
        dist = T.dist_SO(F)
        r0, w = self.match_radius, (self.BLEND - self.MATCH) * self.delta
        s, ds, _ = smoothstep((dist - r0) / w)
        Rm = T.polar_rotation(F)
        with np.errstate(invalid="ignore", divide="ignore"):
            N = np.where(dist[..., None, None] > 0, (F - Rm) / dist[..., None, None], 0.0)
        return 1.0 - s, -(ds / w)[..., None, None] * N

    def _V_first(self, a, F):
        """``(V, DV)`` for batched ``F``."""
        F = np.asarray(F, dtype=float).reshape(-1, 2, 2)
        a = np.broadcast_to(np.asarray(a, dtype=float), F.shape[:1]).copy()
        V = np.empty(len(F))
        DV = np.empty_like(F)
        dist = T.dist_SO(F)
        nrm = T.frob(F)
        exact_in = dist < self.match_radius
        if exact_in.any():
            V[exact_in] = self.model.wbar_a(a[exact_in], F[exact_in], self.mu)
            DV[exact_in] = self.model.dwbar_a(a[exact_in], F[exact_in], self.mu)
        far = ~exact_in & (nrm > self.R + self.eps)
        if far.any():
            q, dq = self._q(a[far], F[far])
            V[far] = q + self.kappa_eps - self.C_eps
            DV[far] = dq
        rest = ~(exact_in | far)
        if rest.any():
            Fr, ar = F[rest], a[rest]
            vh, dvh, u, Hu = self._vhat_a(ar, Fr)
            k = len(self.wts)
            shifted = (Fr[:, None] - self.eps * self.xi[None]).reshape(-1, 2, 2)
            vs, dvs, _, _ = self._vhat_a(np.repeat(ar, k), shifted,
                                         u0=np.repeat(u, k, axis=0), H0=np.repeat(Hu, k, axis=0))
            ve = vs.reshape(-1, k) @ self.wts
            dve = np.einsum("nkij,k->nij", dvs.reshape(-1, k, 2, 2), self.wts)
            rho, drho = self._rho(Fr)
            gap = ve - vh - self.C_eps
            V[rest] = vh + (1 - rho) * gap
            DV[rest] = dvh + (1 - rho)[:, None, None] * (dve - dvh) - drho * gap[:, None, None]
        return V, DV

    def eval_V(self, y, F, order=2, h=1e-5):
        """Return ``(V, DV, D2V)`` at points ``y`` and matrices ``F`` (``D2V`` if ``order == 2``)."""
        F = np.asarray(F, dtype=float)
        shape = F.shape[:-2]
        a = np.ravel(self.model.stiffness(np.broadcast_to(y, shape + (2,))))
        Ff = F.reshape(-1, 2, 2)
        V, DV = self._V_first(a, Ff)
        if order < 2:
            return V.reshape(shape), DV.reshape(F.shape)
        H = np.empty((len(Ff), 2, 2, 2, 2))
        dist = T.dist_SO(Ff)
        nrm = T.frob(Ff)
        exact_in = dist < self.match_radius - 2 * h
        far = ~exact_in & (nrm > self.R + self.eps + 2 * h)
        if exact_in.any():
            H[exact_in] = self.model.d2wbar_a(a[exact_in], Ff[exact_in], self.mu)
        if far.any():
            H[far] = 3 * self.lam * T.identity4(2)
        rest = ~(exact_in | far)
        if rest.any():
            Fr, ar = Ff[rest], a[rest]
            E = np.eye(4).reshape(4, 2, 2)
            pts = np.concatenate([Fr[:, None] + h * E[None], Fr[:, None] - h * E[None]], axis=1)
            _, dv = self._V_first(np.repeat(ar, 8), pts.reshape(-1, 2, 2))
            dv = dv.reshape(-1, 8, 2, 2)
            Hr = (dv[:, :4] - dv[:, 4:]) / (2 * h)  # Hr[n, kl, i, j] = d DV_ij / d F_kl
            Hr = np.moveaxis(Hr.reshape(-1, 2, 2, 2, 2), (1, 2), (3, 4))
            H[rest] = 0.5 * (Hr + np.moveaxis(Hr, (1, 2), (3, 4)))
        return V.reshape(shape), DV.reshape(F.shape), H.reshape(shape + (2, 2, 2, 2))

    @property
    def match_radius(self):
        return self.MATCH * self.delta

    @property
    def kappa_eps(self):
        # mollifying the quadratic cap shifts it by a constant
        return 1.5 * self.lam * self.eps ** 2 * float(np.sum(self.wts * np.sum(self.xi ** 2, axis=(1, 2))))

    def Wbar(self, y, F):
        return self.model.Wbar(y, F, self.mu)


def _tangent_basis(u):
    ref = np.where(np.abs(u[:, :1]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    t1 = ref - np.sum(ref * u, axis=-1, keepdims=True) * u
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(u, t1)
    return t1, t2


def _signed_sv_grid(L, n):
    g = np.linspace(-L, L, n)
    s1, s2 = np.meshgrid(g, g, indexing="ij")
    F = np.zeros(s1.shape + (2, 2))
    F[..., 0, 0] = s1
    F[..., 1, 1] = s2
    return F.reshape(-1, 2, 2)


def build_bound(model, record, mollify_width=None, scan_radius=8.0, n_scan=161, **kw):
    """Fix the cap offset ``C0``, cap radius ``R``, mollification width and
    the mollification constant ``C_eps`` and return the :class:`ConvexBound`.

    ``C0`` comes from a scan over ``diag(s1, s2)`` (all functions involved are
    invariant under ``F -> R F Q``).  ``R`` and the Lipschitz constant of
    ``Vhat`` use the bound ``Vbar(F) <= lambda |F|^2 + max c + sqrt(2) Pmax |F|``.
    """
    cb = ConvexBound(model, record, **kw)
    lam, delta = cb.lam, cb.delta
    a_values = stiffness_samples(model)
    Fg = _signed_sv_grid(scan_radius, n_scan)
    sq = T.inner(Fg, Fg)

    C0 = -np.inf
    for a in a_values:
        mins = cb.min_vbar(a)
        gap = 1.5 * lam * sq + mins - model.wbar_a(a, Fg, cb.mu)
        i = int(np.argmax(gap))

        def neg(s):
            return -(1.5 * lam * np.sum(s * s) + mins - float(model.wbar_a(a, np.diag(s), cb.mu)))

        res = minimize(neg, np.diag(Fg[i]), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-13})
        C0 = max(C0, gap[i], -res.fun)
    C0 = float(C0 + 1e-6 * (1 + abs(C0)))
    cb.C0 = C0

    u = fibonacci_sphere(20000)
    pmax = 0.0
    for a in a_values:
        _, P, _, _ = cb._local(np.full(len(u), a), u)
        pmax = max(pmax, float(np.max(T.frob(P))))
    pmax *= 1.01
    b = np.sqrt(2) * pmax
    cb.R = float(max((b + np.sqrt(b * b + 2 * lam * max(C0, 0.0))) / lam, np.sqrt(2) + delta))

    # mollification: C_eps = eps * Lip(Vhat) * sum w |xi| bounds Vhat_eps - Vhat;
    # the width keeps the gluing perturbation below lambda / 4
    lip = 3 * lam * (cb.R + delta) + pmax
    m1 = float(np.sum(cb.wts * T.frob(cb.xi)))
    w = (cb.BLEND - cb.MATCH) * delta
    hess_rho = 5.78 / w ** 2 + 1.875 / w / cb.match_radius
    if mollify_width is None:
        # shifted points of the blend band stay inside U_delta
        mollify_width = min((1 - cb.BLEND) * delta, lam / (4 * hess_rho * lip * m1))
    cb.eps = float(mollify_width)
    cb.C_eps = float(max(cb.eps * lip * m1, cb.kappa_eps))
    record.cap_radius, record.cap_offset = cb.R, cb.C0
    record.mollify_width, record.moll_const = cb.eps, cb.C_eps
    record.margins["lipschitz_vhat"] = lip
    record.margins["pmax"] = pmax
    record.margins["glue_hessian_perturbation"] = cb.C_eps * hess_rho
    return cb


def bound_from_record(model, record, **kw):
    """Rebuild a :class:`ConvexBound` from a record, running :func:`build_bound` only
    if the cap constants are missing."""
    if np.isfinite(record.cap_radius) and np.isfinite(record.mollify_width):
        return ConvexBound(model, record, **kw)
    return build_bound(model, record, **kw)


# -- verification ----------------------------------------------------------------

@dataclass
class MatchingReport:
    n_samples: int
    seed: int
    max_excess: float          # max (V - Wbar), must be <= 1e-9
    n_violations: int
    max_match_err: float       # max |V - Wbar| on U_{delta/2}
    midpoint_margin: float     # min [(V(F)+V(G))/2 - V(mid)] / |F-G|^2
    lam: float

    @property
    def passed(self):
        return (self.n_violations == 0 and self.max_match_err <= 1e-8
                and self.midpoint_margin >= self.lam / 8 - 1e-9)


def verify_matching(cb, model, n_samples=10000, seed=0, radius=5.0, n_pairs=1000):
    rng = np.random.default_rng(seed)
    n_far = n_samples // 2
    F = np.concatenate([sample_ball(rng, n_far, radius),
                        T.random_rotation(rng, 2, n_samples - n_far)
                        + sample_ball(rng, n_samples - n_far, 2 * cb.delta)])
    y = rng.uniform(size=(n_samples, 2))
    V, _ = cb.eval_V(y, F, order=1)
    Wb = model.Wbar(y, F, cb.mu)
    excess = V - Wb
    inside = T.dist_SO(F) < cb.delta / 2
    match = float(np.max(np.abs(excess[inside]))) if inside.any() else 0.0

    yp = rng.uniform(size=(n_pairs, 2))
    A = sample_ball(rng, n_pairs, radius)
    B = np.where(rng.uniform(size=(n_pairs, 1, 1)) < 0.5,
                 A + sample_ball(rng, n_pairs, 0.5), sample_ball(rng, n_pairs, radius))
    VA, _ = cb.eval_V(yp, A, order=1)
    VB, _ = cb.eval_V(yp, B, order=1)
    VM, _ = cb.eval_V(yp, 0.5 * (A + B), order=1)
    gap = (0.5 * (VA + VB) - VM) / T.inner(A - B, A - B)
    return MatchingReport(n_samples, seed, float(excess.max()), int(np.sum(excess > 1e-9)),
                          match, float(gap.min()), cb.lam)
