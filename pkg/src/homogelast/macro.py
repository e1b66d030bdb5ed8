"""Macroscopic Dirichlet problems on the unit square and two-scale error studies.

Displacements are nodal Q1 fields ``u[i, j, :]`` on a :class:`DirichletGrid`
with boundary nodes fixed to the datum ``g``.  All minimizations use the
density plus ``mu det``: for fields with fixed boundary values the det term
integrates to a constant (exactly, with 2x2 Gauss on Q1), so the minimizers
are unchanged while the Newton Hessians gain the calibrated ellipticity.
"""

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .cell import CellOptions
from .fem import NREF, DirichletGrid, PeriodicGrid
from .homogenize import homogenized_point
from .layered import layered_hom, solve_slopes
from .solvers import NotConverged, newton, pcg

log = logging.getLogger(__name__)

CHUNK = 1 << 16  # quadrature points per density evaluation batch


# -- data ---------------------------------------------------------------------------

@dataclass
class LoadData:
    """Body force and Dirichlet datum ``g(x) = R x + c + E x + extra(x)``; ``g0 = R x + c``."""

    force: tuple = (0.0, 0.0)
    theta: float = 0.0
    shift: tuple = (0.0, 0.0)
    strain: tuple = ((0.0, 0.0), (0.0, 0.0))
    force_fn: object = field(default=None, repr=False)
    extra_fn: object = field(default=None, repr=False)

    @property
    def R(self):
        return T.rotation(self.theta)

    def g0(self, x):
        return x @ self.R.T + np.asarray(self.shift)

    def g(self, x):
        out = self.g0(x) + x @ np.asarray(self.strain, dtype=float).T
        if self.extra_fn is not None:
            out = out + self.extra_fn(x)
        return out

    def f(self, x):
        if self.force_fn is not None:
            return self.force_fn(x)
        return np.broadcast_to(np.asarray(self.force, dtype=float), x.shape[:-1] + (2,))

    def rotated(self, Q):
        """Load with datum and force rotated by ``Q`` (``g -> Q g``, ``f -> Q f``)."""
        Q = np.asarray(Q, dtype=float)
        th = self.theta + np.arctan2(Q[1, 0], Q[0, 0])
        ff = self.force_fn
        ef = self.extra_fn
        return LoadData(force=tuple(Q @ np.asarray(self.force, dtype=float)), theta=th,
                        shift=tuple(Q @ np.asarray(self.shift, dtype=float)),
                        strain=tuple(map(tuple, Q @ np.asarray(self.strain, dtype=float))),
                        force_fn=None if ff is None else (lambda x: ff(x) @ Q.T),
                        extra_fn=None if ef is None else (lambda x: ef(x) @ Q.T))

    def to_dict(self):
        d = asdict(self)
        d.pop("force_fn")
        d.pop("extra_fn")
        return d


def smallness(load, m=64, r=4.0):
    """``|f|_{L^r} + |g - g0|_{W^{2,r}} + |dist(grad g0, SO)|_inf`` on a ``m x m`` grid."""
    grid = DirichletGrid(m)
    xq = grid.quad_points()
    fq = load.f(xq)
    f_norm = grid.integrate(np.sum(fq ** 2, axis=-1) ** (r / 2)) ** (1 / r)
    h = 1e-4
    def pert(x):
        return load.g(x) - load.g0(x)
    w = pert(xq)
    d1 = [(pert(xq + h * e) - pert(xq - h * e)) / (2 * h) for e in np.eye(2)]
    d2 = []
    for a in range(2):
        for b in range(2):
            ea, eb = h * np.eye(2)[a], h * np.eye(2)[b]
            d2.append((pert(xq + ea + eb) - pert(xq + ea - eb) - pert(xq - ea + eb)
                       + pert(xq - ea - eb)) / (4 * h * h))
    dens = np.sum(w ** 2, -1) ** (r / 2)
    dens = dens + sum(np.sum(d ** 2, -1) ** (r / 2) for d in d1) + sum(np.sum(d ** 2, -1) ** (r / 2) for d in d2)
    g_norm = grid.integrate(dens) ** (1 / r)
    # grad g0 = R, so the distance term vanishes
    return float(f_norm + g_norm)


# -- homogenized densities ------------------------------------------------------------

def _chunked(fn, F, order, *extra):
    """Apply ``fn(F_chunk, order, *extra_chunks) -> (W, DW, D2)`` in batches."""
    F = np.asarray(F, dtype=float)
    shape = F.shape[:-2]
    Ff = F.reshape(-1, 2, 2)
    ex = [np.reshape(e, (len(Ff),) + np.shape(e)[len(shape):]) for e in extra]
    W = np.empty(len(Ff))
    DW = np.empty((len(Ff), 2, 2))
    D2 = np.empty((len(Ff), 2, 2, 2, 2)) if order >= 2 else None
    for lo in range(0, len(Ff), CHUNK):
        sl = slice(lo, lo + CHUNK)
        w, dw, d2 = fn(Ff[sl], order, *[e[sl] for e in ex])
        W[sl], DW[sl] = w, dw
        if D2 is not None:
            D2[sl] = d2
    return (W.reshape(shape), DW.reshape(shape + (2, 2)),
            None if D2 is None else D2.reshape(shape + (2, 2, 2, 2)))


class LayeredHom:
    """Exact ``W_hom`` of a laminate, batched over quadrature points."""

    def __init__(self, model, mu):
        self.model, self.mu = model, float(mu)

    def _eval(self, F, order):
        return layered_hom(self.model, F, self.mu, order=order)[:3]

    def __call__(self, F, order=2):
        return _chunked(self._eval, F, order)


class CellHom:
    """``W_hom`` by cell solves at each query, with a key cache.

    ``quantum > 0`` rounds gradients to that step before solving (reuse
    heuristic); 0 means exact keys.
    """

    def __init__(self, model, cb, n=16, quantum=0.0, opts=None, mu=None):
        self.model, self.cb, self.n = model, cb, n
        self.mu = cb.mu if mu is None else float(mu)
        self.quantum = float(quantum)
        self.opts = opts or CellOptions()
        self.cache = {}

    def point(self, F):
        Fk = np.round(F / self.quantum) * self.quantum if self.quantum > 0 else F
        key = tuple(np.round(Fk.ravel(), 14))
        p = self.cache.get(key)
        if p is None:
            p = homogenized_point(self.model, self.cb, Fk, PeriodicGrid(self.n), self.opts, self.mu)
            self.cache[key] = p
        return p

    def __call__(self, F, order=2):
        F = np.asarray(F, dtype=float)
        shape = F.shape[:-2]
        Ff = F.reshape(-1, 2, 2)
        W = np.empty(len(Ff))
        DW = np.empty((len(Ff), 2, 2))
        D2 = np.empty((len(Ff), 2, 2, 2, 2))
        for i, Fi in enumerate(Ff):
            p = self.point(Fi)
            W[i], DW[i], D2[i] = p.w_hom, p.dw_hom, p.d2w_hom
        return W.reshape(shape), DW.reshape(shape + (2, 2)), D2.reshape(shape + (2, 2, 2, 2))


def hom_density(model, cb=None, mu=None, n=16, quantum=0.0):
    mu = cb.mu if mu is None else mu
    if model.kind in ("layered", "homogeneous"):
        return LayeredHom(model, mu)
    return CellHom(model, cb, n=n, quantum=quantum, mu=mu)


# -- generic Dirichlet minimization ----------------------------------------------------------

class _Macro:
    """``E(u) = sum_q w [dens(grad u) - f . u]`` over ``u = g`` on the boundary."""

    def __init__(self, grid, density, load, add_det_mu=0.0):
        self.grid, self.density, self.load = grid, density, load
        self.mu = float(add_det_mu)
        nodes = grid.nodes()
        self.ub = load.g(nodes)
        self.free = grid.free
        self.fq = load.f(grid.quad_points())
        self.fload = grid.load(self.fq)
        self._cache = None
        self.cg_its = []

    def full(self, x):
        u = self.ub.copy()
        u[self.free] = x.reshape(-1, 2)
        return u

    def _eval(self, x, order):
        key = x.tobytes()
        if self._cache is not None and self._cache[0] == key and self._cache[1] >= order:
            return self._cache[2]
        G = self.grid.grad(self.full(x))
        W, DW, D2 = self.density(G, order=order)
        if self.mu:
            W = W + self.mu * T.det(G)
            DW = DW + self.mu * T.cof(G)
            if D2 is not None:
                D2 = D2 + self.mu * T.D2DET2
        out = (W, DW, D2)
        self._cache = (key, order, out)
        return out

    def energy(self, x):
        W = self._eval(x, 1)[0]
        return float(self.grid.integrate(W) - np.sum(self.fload * self.full(x)))

    def gradient(self, x):
        r = self.grid.div(self._eval(x, 1)[1]) - self.fload
        return r[self.free].ravel()

    def noise_floor(self, x):
        """Rounding level of the nodal gradient.

        Nodal values of size ``|u|`` carry ``eps_mach |u|`` rounding, which the
        difference quotients turn into ``eps_mach |u| / h`` in ``grad u`` and
        ``~ 4 h |L|`` times that in each nodal residual, independent of ``h``.
        """
        L = self._eval(x, 2)[2]
        umax = float(np.max(np.abs(self.full(x))))
        return 64 * np.finfo(float).eps * max(umax, 1.0) * float(np.max(np.abs(L)))

    def solve(self, x, g):
        """Matrix-free CG on the Hessian, preconditioned by a scaled Laplacian."""
        L = self._eval(x, 2)[2]
        grid, free = self.grid, self.free
        scale = float(np.mean(np.einsum("...abab->...", L))) / 4
        pre = grid.laplace_preconditioner(scale)
        buf = np.zeros((grid.nn, grid.nn, 2))

        def embed(v):
            buf[free] = v.reshape(-1, 2)
            return buf

        def mv(v):
            return grid.hessvec(L, embed(v))[free].ravel()

        def M(r):
            return pre(embed(r))[free].ravel()

        s, it = pcg(mv, -g, M, rtol=1e-10, maxiter=1000)
        self.cg_its.append(it)
        return s, it


def _minimize(problem, x0, gtol, maxit=40, label="macro"):
    """Newton until the nodal residual per unit area is at most ``gtol`` (or at rounding level)."""
    h2 = problem.grid.h ** 2
    tol = max(gtol * h2, problem.noise_floor(x0))
    x, info = newton(problem.energy, problem.gradient, problem.solve, x0, gtol=tol, maxit=maxit,
                     label=label)
    info.residual /= h2
    return problem.full(x), info


@dataclass
class MacroSolution:
    u: np.ndarray
    energy: float           # discrete I(u) without the det term
    residual: float
    iterations: int
    max_dist_SO: float
    route: str = "W"


def _report(problem, u, info, route, base_density):
    grid = problem.grid
    G = grid.grad(u)
    W = base_density(G, order=1)[0]
    E = float(grid.integrate(W) - np.sum(problem.fload * u))
    return MacroSolution(u, E, info.residual, info.iterations, float(np.max(T.dist_SO(G))), route)


def solve_hom(model, cb, load, mesh, homog=None, gtol=1e-10, both_routes=True, mu=None):
    """Homogenized problem, by the ``W_hom`` route and (optionally) the ``V_hom`` route.

    The ``W_hom`` route minimizes ``sum_q w [W_hom(grad u) - f . u]`` directly;
    the ``V_hom`` route minimizes ``W_hom + mu det``.  Returns
    ``(solution_W, solution_V, h1_gap)``; the V-route entries are None when
    ``both_routes`` is false.
    """
    grid = mesh if isinstance(mesh, DirichletGrid) else DirichletGrid(int(mesh))
    mu = cb.mu if mu is None else mu
    homog = homog or hom_density(model, cb, mu)
    pw = _Macro(grid, homog, load)
    # start from g, extended into the domain
    x0 = load.g(grid.nodes())[grid.free].ravel()
    uw, iw = _minimize(pw, x0, gtol, label="hom-W")
    sw = _report(pw, uw, iw, "W", homog)
    if not both_routes:
        return sw, None, None
    pv = _Macro(grid, homog, load, add_det_mu=mu)
    uv, iv = _minimize(pv, x0, gtol, label="hom-V")
    sv = _report(pv, uv, iv, "V", homog)
    return sw, sv, h1_norm(grid, uw - uv)


class EpsDensity:
    """``W(x/eps, F)`` at the quadrature points of a fixed grid."""

    def __init__(self, model, grid, eps):
        self.model = model
        self.a = model.stiffness(grid.quad_points() / eps)

    def _eval(self, F, order, a):
        m = self.model
        return m.w_a(a, F), m.dw_a(a, F), m.d2w_a(a, F) if order >= 2 else None

    def __call__(self, F, order=2):
        return _chunked(self._eval, F, order, self.a)


def check_eps_mesh(m, eps):
    L = 1.0 / eps
    if abs(L - round(L)) > 1e-9 or m % int(round(L)):
        raise ValueError(f"eps = 1/{L:g} must divide the mesh ({m} cells per side)")


def solve_eps(model, cb, load, mesh, eps, u_start=None, gtol=1e-10, mu=None):
    """Fine-scale problem with oscillating density; warm start ``u_start`` then ``g``."""
    grid = mesh if isinstance(mesh, DirichletGrid) else DirichletGrid(int(mesh))
    check_eps_mesh(grid.m, eps)
    mu = cb.mu if mu is None else mu
    dens = EpsDensity(model, grid, eps)
    prob = _Macro(grid, dens, load, add_det_mu=mu)
    starts = []
    if u_start is not None:
        starts.append(np.asarray(u_start)[grid.free].ravel())
    starts.append(load.g(grid.nodes())[grid.free].ravel())
    last = None
    for x0 in starts:
        try:
            u, info = _minimize(prob, x0, gtol, label=f"eps={eps:g}")
            return _report(prob, u, info, "eps", dens)
        except (NotConverged, RuntimeError) as exc:
            log.info("eps solve from a warm start failed: %s", exc)
            last = exc
    raise NotConverged(f"fine-scale solve failed from every start: {last}")


# -- norms -------------------------------------------------------------------------------

def h1_norm(grid, u):
    """Full ``H^1`` norm of a nodal field (quadrature)."""
    v = grid.values(u)
    G = grid.grad(u)
    return float(np.sqrt(grid.integrate(np.sum(v ** 2, -1)) + grid.integrate(np.sum(G ** 2, (-2, -1)))))


def l2_norm(grid, u):
    return float(np.sqrt(grid.integrate(np.sum(grid.values(u) ** 2, -1))))


def nodal_gradient(grid, u):
    """Nodal average of the element gradients (weights from the adjacent elements)."""
    G = grid.grad(u)
    num = grid._scatter([np.einsum("ijgab,g->ijab", G, NREF[c]) for c in range(4)])
    den = grid._scatter([np.full((grid.ne, grid.ne), NREF[c].sum()) for c in range(4)])
    return num / den[..., None, None]


def cutoff(x, eps):
    """``eta(x) = min(1, dist(x, boundary of the unit square) / eps)`` and its gradient."""
    d = np.stack([x[..., 0], 1 - x[..., 0], x[..., 1], 1 - x[..., 1]], axis=-1)
    k = np.argmin(d, axis=-1)
    dist = np.take_along_axis(d, k[..., None], -1)[..., 0]
    normals = np.array([[1.0, 0], [-1.0, 0], [0, 1.0], [0, -1.0]])
    inside = dist < eps
    eta = np.minimum(1.0, dist / eps)
    grad = np.where(inside[..., None], normals[k] / eps, 0.0)
    return eta, grad


# -- two-scale expansion ----------------------------------------------------------------

def layered_corrector_values(model, G, y1, mu, c=None):
    """``phi(y1, G)`` for a batch of gradients ``G[..., 2, 2]`` and points ``y1[...]``."""
    if c is None:
        c, _, _ = solve_slopes(model, G, mu)
    t = model.breakpoints if model.kind == "layered" else np.array([0.0, 1.0])
    theta = np.diff(t)
    d = np.concatenate([np.zeros_like(c[..., :1, :]),
                        np.cumsum(c[..., :-1, :] * theta[:-1, None], axis=-2)], axis=-2)
    mean = np.einsum("i,...ia->...a", theta, d + 0.5 * c * theta[:, None])
    d = d - mean[..., None, :]
    y1 = np.mod(y1, 1.0)
    idx = np.clip(np.searchsorted(t, y1, side="right") - 1, 0, len(theta) - 1)
    ci = np.take_along_axis(c, idx[..., None, None], axis=-2)[..., 0, :]
    di = np.take_along_axis(d, idx[..., None, None], axis=-2)[..., 0, :]
    return di + ci * (y1 - t[idx])[..., None]


@dataclass
class Expansion:
    v: np.ndarray
    eta: np.ndarray
    phi: np.ndarray         # phi(x/eps, grad u0(x)) at the nodes
    chain_rule_gap: float   # L2 gap between the chain-rule gradient and grad of the Q1 interpolant


def two_scale_expand(u0, model, cb, mesh, eps, mu=None, cell_n=None, quantum=1e-3):
    """``v = u0 + eps eta phi(x/eps, grad u0)`` as a nodal Q1 field.

    Layered models use the closed-form corrector at every node; other models
    solve cell problems at gradients rounded to ``quantum`` on a cell grid
    matching the macro mesh (``m eps`` cells per period).
    """
    grid = mesh if isinstance(mesh, DirichletGrid) else DirichletGrid(int(mesh))
    check_eps_mesh(grid.m, eps)
    mu = cb.mu if mu is None else mu
    x = grid.nodes()
    Gn = nodal_gradient(grid, u0)
    eta, _ = cutoff(x, eps)
    if model.kind in ("layered", "homogeneous"):
        phi = layered_corrector_values(model, Gn, x[..., 0] / eps, mu)
    else:
        n = cell_n or int(round(grid.m * eps))
        phi = _cell_corrector_values(model, cb, Gn, x, eps, n, quantum, mu)
    v = u0 + eps * eta[..., None] * phi
    gap = _chain_rule_gap(grid, model, u0, v, eps, mu) if model.kind == "layered" else np.nan
    return Expansion(v, eta, phi, gap)


def _cell_corrector_values(model, cb, Gn, x, eps, n, quantum, mu):
    from .cell import solve_corrector
    cells = {}
    out = np.zeros(Gn.shape[:-1])
    keys = np.round(Gn / quantum) * quantum if quantum > 0 else Gn
    flat = keys.reshape(-1, 2, 2)
    idx = np.rint(np.mod(x / eps, 1.0) * n).astype(int) % n
    ii, jj = idx[..., 0].ravel(), idx[..., 1].ravel()
    of = out.reshape(-1, 2)
    for p, F in enumerate(flat):
        key = tuple(np.round(F.ravel(), 12))
        sol = cells.get(key)
        if sol is None:
            sol = solve_corrector(model, cb, F, PeriodicGrid(n), mu=mu)
            cells[key] = sol
        of[p] = sol.phi[ii[p], jj[p]]
    return out


def _chain_rule_gap(grid, model, u0, v, eps, mu, t=1e-6, rows=64):
    """Compare ``grad v`` with the chain rule at the quadrature points (layered models)."""
    xq_all = grid.quad_points()
    Gq_all = grid.grad(u0)
    Gn = nodal_gradient(grid, u0)
    dG_all = grid.grad(Gn.reshape(Gn.shape[:2] + (4,))).reshape(Gq_all.shape + (2,))  # d_j grad u0
    Gv_all = grid.grad(v)
    t_ = model.breakpoints
    total = 0.0
    # blocks of element rows keep the per-point temporaries small
    for lo in range(0, grid.ne, rows):
        sl = slice(lo, lo + rows)
        xq, Gq, dG = xq_all[sl], Gq_all[sl], dG_all[sl]
        y1 = xq[..., 0] / eps
        eta, deta = cutoff(xq, eps)
        c, _, _ = solve_slopes(model, Gq, mu)
        phi = layered_corrector_values(model, Gq, y1, mu, c=c)
        idx = np.clip(np.searchsorted(t_, np.mod(y1, 1.0), side="right") - 1, 0, len(t_) - 2)
        grad_y = np.zeros(Gq.shape)
        grad_y[..., :, 0] = np.take_along_axis(c, idx[..., None, None], axis=-2)[..., 0, :]
        Dphi = np.zeros(Gq.shape)
        for j in range(2):
            H = dG[..., j]
            p1 = layered_corrector_values(model, Gq + t * H, y1, mu)
            p0 = layered_corrector_values(model, Gq - t * H, y1, mu)
            Dphi[..., :, j] = (p1 - p0) / (2 * t)
        chain = Gq + eta[..., None, None] * grad_y + eps * eta[..., None, None] * Dphi \
            + eps * np.einsum("...a,...b->...ab", phi, deta)
        d = Gv_all[sl] - chain
        total += float(grid.w * np.sum(d ** 2))
    return float(np.sqrt(total))


# -- error study ------------------------------------------------------------------------------

@dataclass
class TwoScaleReport:
    rows: list
    slope_H1: float = np.nan
    slope_L2: float = np.nan
    residual_H1: float = np.nan
    residual_L2: float = np.nan
    lam: float = np.nan
    complete: bool = True
    runtime: float = 0.0

    def monotone_H1(self):
        e = [r["err_H1"] for r in self.rows]
        return all(b < a for a, b in zip(e, e[1:]))

    def to_dict(self):
        return asdict(self)


def fit_slope(eps, err):
    """Least-squares slope and residual of ``log err`` against ``log eps``."""
    x, y = np.log(np.asarray(eps, dtype=float)), np.log(np.asarray(err, dtype=float))
    A = np.column_stack([x, np.ones_like(x)])
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[0]), float(np.sqrt(res[0] / len(x))) if len(res) else 0.0


def error_study(model, cb, load, eps_list=(1 / 8, 1 / 16, 1 / 32, 1 / 64), cells_per_period=16,
                mu=None, progress=None, gtol=1e-10):
    """Two-scale error study with mesh ``m = cells_per_period / eps``."""
    t0 = time.time()
    mu = cb.mu if mu is None else mu
    eps_list = sorted(eps_list, reverse=True)
    lam = smallness(load)
    rows = []
    complete = True
    homog = hom_density(model, cb, mu)
    for eps in eps_list:
        m = int(round(cells_per_period / eps))
        grid = DirichletGrid(m)
        try:
            s0, _, _ = solve_hom(model, cb, load, grid, homog=homog, gtol=gtol, both_routes=False, mu=mu)
            ex = two_scale_expand(s0.u, model, cb, grid, eps, mu=mu)
            se = solve_eps(model, cb, load, grid, eps, u_start=ex.v, gtol=gtol, mu=mu)
        except Exception as exc:  # partial report on any failure
            log.error("eps = %g failed: %s", eps, exc)
            complete = False
            break
        dens = EpsDensity(model, grid, eps)
        Gv = grid.grad(ex.v)
        e_v = float(grid.integrate(dens(Gv, order=1)[0]) - np.sum(grid.load(load.f(grid.quad_points())) * ex.v))
        row = {"eps": eps, "m": m,
               "err_L2": l2_norm(grid, se.u - s0.u),
               "err_H1": h1_norm(grid, se.u - ex.v),
               "err_L2_v": l2_norm(grid, se.u - ex.v),
               "corrector_L2": eps * l2_norm(grid, ex.eta[..., None] * ex.phi),
               "energy_eps": se.energy, "energy_hom": s0.energy, "energy_v": e_v,
               "lambda": lam, "rhs_surrogate": np.sqrt(eps) * lam,
               "chain_rule_gap": ex.chain_rule_gap,
               "newton_eps": se.iterations, "residual_eps": se.residual,
               "max_dist_SO_hom": s0.max_dist_SO, "max_dist_SO_eps": se.max_dist_SO}
        rows.append(row)
        if progress:
            progress(row)
    rep = TwoScaleReport(rows, lam=lam, complete=complete)
    if len(rows) >= 2:
        e = [r["eps"] for r in rows]
        rep.slope_H1, rep.residual_H1 = fit_slope(e, [r["err_H1"] for r in rows])
        rep.slope_L2, rep.residual_L2 = fit_slope(e, [r["err_L2"] for r in rows])
    rep.runtime = time.time() - t0
    return rep
