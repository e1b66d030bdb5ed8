"""Periodic cell problems: corrector, flux, flux corrector, linearized corrector.

Fields live on a :class:`~homogelast.fem.PeriodicGrid`.  Energies are
reported per unit volume of the cell ``kY``.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .fem import NREF, PeriodicGrid
from .layered import solve_layered  # noqa: F401  (re-exported oracle)
from .solvers import LineSearchStall, NegativeCurvature, NotConverged, newton, pcg

log = logging.getLogger(__name__)


class TrustRegionExceeded(RuntimeError):
    def __init__(self, max_dist, radius):
        super().__init__(f"trust region exceeded: max dist_SO(F + grad phi) = {max_dist:.4g} "
                         f">= {radius:.4g}")
        self.max_dist = max_dist
        self.radius = radius


@dataclass
class CellOptions:
    gtol: float = 1e-10
    cg_rtol: float = 1e-10
    maxit: int = 60
    cg_maxiter: int = 3000
    convex_fallback: bool = True
    check_containment: bool = True


@dataclass
class CorrectorSolution:
    F: np.ndarray
    n: int
    k: int
    mu: float
    phi: np.ndarray          # (nn, nn, 2) nodal, zero mean
    grad_phi: np.ndarray     # (ne, ne, 4, 2, 2)
    J: np.ndarray            # (ne, ne, 4, 2, 2) flux fluctuation
    energy: float            # mean of W + mu det
    w_energy: float          # mean of W
    iterations: int
    residual: float
    max_dist: float
    route: str = "fast"
    cg_iterations: list = field(default_factory=list)
    sigma: np.ndarray = None  # (nn, nn, 2, 2, 2), sigma[..., i, j, k]
    sigma_residual: float = np.nan

    def grid(self):
        return PeriodicGrid(self.n, self.k)

    def h1_norm(self):
        g = self.grid()
        return float(np.sqrt(g.integrate(np.sum(self.grad_phi ** 2, axis=(-2, -1))) / g.volume()
                             + g.integrate(np.sum(g.values(self.phi) ** 2, axis=-1)) / g.volume()))

    def diagnostics(self):
        return {"F": self.F.tolist(), "n": self.n, "k": self.k, "mu": self.mu,
                "energy": self.energy, "w_energy": self.w_energy, "iterations": self.iterations,
                "residual": self.residual, "max_dist_SO": self.max_dist, "route": self.route,
                "cg_iterations": list(self.cg_iterations),
                "sigma_residual": None if np.isnan(self.sigma_residual) else self.sigma_residual}

    def export(self, stem):
        """Write ``stem.csv`` (i, j, phi_1, phi_2) and ``stem.json`` (diagnostics)."""
        nn = self.phi.shape[0]
        ii, jj = np.meshgrid(np.arange(nn), np.arange(nn), indexing="ij")
        rows = np.column_stack([ii.ravel(), jj.ravel(), self.phi[..., 0].ravel(), self.phi[..., 1].ravel()])
        with open(f"{stem}.csv", "w") as fh:
            fh.write("i,j,phi_1,phi_2\n")
            for r in rows:
                fh.write(f"{int(r[0])},{int(r[1])},{r[2]:.17g},{r[3]:.17g}\n")
        with open(f"{stem}.json", "w") as fh:
            json.dump(self.diagnostics(), fh, indent=2)


# -- energy pieces on a grid ---------------------------------------------------

class _CellEnergy:
    """Discrete energy ``phi -> mean_q Wbar(y_q, F + grad phi)`` and its derivatives."""

    def __init__(self, model, mu, F, grid, cb=None, convex=False):
        self.model, self.mu, self.grid = model, float(mu), grid
        self.F = np.asarray(F, dtype=float)
        self.yq = grid.quad_points()
        self.a = model.stiffness(self.yq)
        self.cb = cb
        self.convex = convex
        self.vol = grid.volume()
        self._cache = None

    def state(self, x):
        return self.F + self.grid.grad(x.reshape(self.grid.nn, self.grid.nn, 2))

    def _eval(self, x, order):
        key = (x.tobytes(), order)
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1]
        G = self.state(x)
        if self.convex:
            out = self.cb.eval_V(self.yq, G, order=order)
        else:
            out = (self.model.wbar_a(self.a, G, self.mu), self.model.dwbar_a(self.a, G, self.mu))
            if order == 2:
                out = out + (self.model.d2wbar_a(self.a, G, self.mu),)
        self._cache = (key, out)
        return out

    def fun(self, x):
        return self.grid.integrate(self._eval(x, 1)[0]) / self.vol

    def grad(self, x):
        return (self.grid.div(self._eval(x, 1)[1]) / self.vol).ravel()

    def hessian(self, x):
        return self._eval(x, 2)[2]


def _field_mean(q, nax):
    """Mean over the leading ``nax`` axes with pairwise summation (numpy only
    sums pairwise along the contiguous axis)."""
    tail = q.shape[nax:]
    flat = np.ascontiguousarray(q.reshape(-1, int(np.prod(tail, dtype=int))).T)
    return flat.mean(axis=1).reshape(tail)


def _zero_mean(nn):
    def proj(v):
        w = v.reshape(nn * nn, 2)
        return (w - w.mean(axis=0)).ravel()
    return proj


def _linear_solver(grid, energy, opts, stats):
    nn = grid.nn

    def solve(x, g):
        L = energy.hessian(x)
        pre = grid.fft_preconditioner(L.mean(axis=(0, 1, 2)))

        def mv(v):
            return (grid.hessvec(L, v.reshape(nn, nn, 2)) / energy.vol).ravel()

        def M(r):
            return pre(r.reshape(nn, nn, 2) * energy.vol).ravel()

        s, it = pcg(mv, -g, M, rtol=opts.cg_rtol, maxiter=opts.cg_maxiter, project=_zero_mean(nn))
        stats.append(it)
        return s, it

    return solve


def _minimize(model, mu, F, grid, x0, opts, cb=None, convex=False):
    E = _CellEnergy(model, mu, F, grid, cb=cb, convex=convex)
    cg = []
    x, info = newton(E.fun, E.grad, _linear_solver(grid, E, opts, cg), x0, gtol=opts.gtol,
                     maxit=opts.maxit, project=_zero_mean(grid.nn),
                     label="convex-cell" if convex else "cell")
    info.cg_iterations = cg
    return x, info


def _finish(model, mu, F, grid, x, info, route):
    nn = grid.nn
    phi = x.reshape(nn, nn, 2)
    gp = grid.grad(phi)
    G = F + gp
    a = model.stiffness(grid.quad_points())
    vol = grid.volume()
    Wb = model.wbar_a(a, G, mu)
    P = model.dwbar_a(a, G, mu)
    J = P - _field_mean(P, 3)
    return CorrectorSolution(
        F=np.array(F, dtype=float), n=grid.n, k=grid.k, mu=float(mu), phi=phi, grad_phi=gp, J=J,
        energy=float(grid.integrate(Wb) / vol), w_energy=float(grid.integrate(model.w_a(a, G)) / vol),
        iterations=info.iterations, residual=info.residual, max_dist=float(np.max(T.dist_SO(G))),
        route=route, cg_iterations=list(info.cg_iterations))


def solve_corrector(model, cb, F, grid, opts=None, mu=None, x0=None):
    """Cell corrector at macroscopic gradient ``F``.

    Minimizes ``mean_q Wbar(y_q, F + grad phi)`` over zero-mean periodic Q1
    fields.  When Newton meets negative curvature or stalls, or the result
    leaves the region where ``V = Wbar`` (radius ``cb.match_radius``), the
    strongly convex surrogate ``V`` of ``cb`` is minimized instead.  ``mu``
    defaults to the calibrated ``cb.mu``.
    """
    opts = opts or CellOptions()
    if mu is None:
        if cb is None:
            raise ValueError("need mu or a ConvexBound")
        mu = cb.mu
    F = np.asarray(F, dtype=float)
    nn = grid.nn
    x0 = np.zeros(nn * nn * 2) if x0 is None else np.asarray(x0, dtype=float).ravel()
    radius = cb.match_radius if cb is not None else np.inf
    sol = None
    try:
        x, info = _minimize(model, mu, F, grid, x0, opts)
        sol = _finish(model, mu, F, grid, x, info, "fast")
        if not opts.check_containment or sol.max_dist < radius:
            return sol
        log.info("fast path left U (max dist %.4g), trying the convex route", sol.max_dist)
    except (NegativeCurvature, LineSearchStall, NotConverged) as exc:
        log.info("fast path failed (%s), trying the convex route", exc)
    if cb is None or not opts.convex_fallback:
        if sol is not None:
            raise TrustRegionExceeded(sol.max_dist, radius)
        raise NotConverged("cell Newton failed and no convex fallback is available")
    x, info = _minimize(model, mu, F, grid, x0, opts, cb=cb, convex=True)
    sol = _finish(model, mu, F, grid, x, info, "convex")
    if sol.max_dist >= radius:
        raise TrustRegionExceeded(sol.max_dist, radius)
    return sol


def euler_lagrange_residual(model, sol):
    g = sol.grid()
    a = model.stiffness(g.quad_points())
    P = model.dwbar_a(a, sol.F + sol.grad_phi, sol.mu)
    return float(np.max(np.abs(g.div(P) / g.volume())))


# -- flux corrector ---------------------------------------------------------------

def nodal_average(grid, q):
    """Quadrature field to nodes: weighted average over the neighbouring Gauss points."""
    flat = q.reshape(q.shape[:3] + (-1,))
    out = grid._scatter([grid.w * np.einsum("ijgm,g->ijm", flat, NREF[c]) for c in range(4)])
    return out.reshape((grid.nn, grid.nn) + q.shape[3:]) / grid.h ** 2


def _dctr(u, axis, h):
    """Centered periodic difference."""
    return (np.roll(u, -1, axis=axis) - np.roll(u, 1, axis=axis)) / (2 * h)


def _inverse_laplacian(f, h):
    """Zero-mean solution of ``-Delta_h u = f`` (5-point, periodic) for ``f[nx, ny, ...]``."""
    nx, ny = f.shape[:2]
    kx = 2 * np.pi * np.fft.fftfreq(nx)
    ky = 2 * np.pi * np.fft.fftfreq(ny)
    sym = (4 * np.sin(kx / 2)[:, None] ** 2 + 4 * np.sin(ky / 2)[None, :] ** 2) / h ** 2
    sym[0, 0] = 1.0
    fh = np.fft.fft2(f, axes=(0, 1))
    uh = fh / sym.reshape(sym.shape + (1,) * (f.ndim - 2))
    uh[0, 0] = 0.0
    return np.real(np.fft.ifft2(uh, axes=(0, 1)))


def flux_divergence_residual(sigma, Jn, h):
    """Discrete L2 norm of ``-D^-_k sigma_ijk - J_ij``."""
    div = sum(_dctr(sigma[..., k], k, h) for k in range(2))
    r = -div - Jn
    return float(np.sqrt(np.mean(np.sum(r ** 2, axis=(-2, -1)))))


def solve_flux_corrector(sol, grid=None, tol=1e-12):
    """Solve ``-Delta sigma_ijk = D_k J_ij - D_j J_ik`` and store ``sol.sigma``.

    ``D`` is the centered difference and ``Delta`` the 5-point Laplacian.  They
    differ at O(h^2) on smooth fields, so the divergence residual is second
    order for smooth fluxes.  Returns ``sol``.
    """
    grid = grid or sol.grid()
    mean = np.abs(_field_mean(sol.J, 3)).max()
    if mean > tol * max(1.0, np.abs(sol.J).max()):
        raise ValueError(f"flux has nonzero mean {mean:.3e}")
    h = grid.h
    Jn = nodal_average(grid, sol.J)
    Jn = Jn - _field_mean(Jn, 2)
    rhs = np.zeros(Jn.shape + (2,))
    for j in range(2):
        for k in range(2):
            rhs[..., j, k] = _dctr(Jn[..., j], k, h) - _dctr(Jn[..., k], j, h)
    sig = _inverse_laplacian(rhs, h)
    sig = 0.5 * (sig - np.swapaxes(sig, -1, -2))
    sol.sigma = sig
    sol.sigma_residual = flux_divergence_residual(sig, Jn, h)
    return sol


# -- linearization ------------------------------------------------------------------

def _act(L, G):
    return np.einsum("...abcd,...cd->...ab", L, G)


@dataclass
class LinearizedSolution:
    G: np.ndarray
    dphi: np.ndarray
    DJ: np.ndarray
    form: float        # mean <D^2 Wbar (G + grad dphi), G + grad dphi>
    form_w: float      # same with D^2 W (no det term)
    cg_iterations: int


def solve_linearized(model, sol, G, grid=None, rtol=1e-12, maxiter=3000):
    """Linearized corrector ``dphi = d_G phi(F)`` and the homogenized quadratic form."""
    grid = grid or sol.grid()
    G = np.asarray(G, dtype=float)
    a = model.stiffness(grid.quad_points())
    S = sol.F + sol.grad_phi
    L = model.d2wbar_a(a, S, sol.mu)
    nn = grid.nn
    vol = grid.volume()
    b = -(grid.div(_act(L, np.broadcast_to(G, S.shape))) / vol).ravel()
    pre = grid.fft_preconditioner(L.mean(axis=(0, 1, 2)))

    def mv(v):
        return (grid.hessvec(L, v.reshape(nn, nn, 2)) / vol).ravel()

    x, it = pcg(mv, b, lambda r: pre(r.reshape(nn, nn, 2) * vol).ravel(), rtol=rtol,
                maxiter=maxiter, project=_zero_mean(nn))
    dphi = x.reshape(nn, nn, 2)
    H = G + grid.grad(dphi)
    LH = _act(L, H)
    DJ = LH - _field_mean(LH, 3)
    form = float(grid.integrate(np.sum(LH * H, axis=(-2, -1))) / vol)
    Lw = model.d2w_a(a, S)
    form_w = float(grid.integrate(np.sum(_act(Lw, H) * H, axis=(-2, -1))) / vol)
    return LinearizedSolution(G, dphi, DJ, form, form_w, it)


# -- multi-cell --------------------------------------------------------------------

@dataclass
class MultiCellResult:
    k: int
    energy: float                 # best mean W over kY
    energies: list                # all local minima found
    best: CorrectorSolution = None


def _random_field(rng, nn, amplitude, modes=3):
    """Smooth random periodic perturbation made of a few low Fourier modes."""
    x = np.arange(nn) / nn
    X, Y = np.meshgrid(x, x, indexing="ij")
    out = np.zeros((nn, nn, 2))
    for p in range(1, modes + 1):
        for q in range(0, modes + 1):
            c = rng.normal(size=(2, 2)) / (p + q)
            arg = 2 * np.pi * (p * X + q * Y)
            out += c[0][None, None] * np.cos(arg)[..., None] + c[1][None, None] * np.sin(arg)[..., None]
    out -= out.mean(axis=(0, 1))
    return amplitude * out / max(np.abs(out).max(), 1e-300)


def multi_cell(model, cb, F, n, k, n_starts=8, seed=0, amplitude=1e-2, opts=None, single=None, mu=None):
    """Best energy per unit volume on ``kY`` over a warm start and random restarts.

    ``single`` is an optional converged one-cell solution at the same ``n``;
    its ``k``-fold periodization is the warm start.
    """
    opts = opts or CellOptions()
    grid = PeriodicGrid(n, k)
    if single is None:
        single = solve_corrector(model, cb, F, PeriodicGrid(n, 1), opts, mu=mu)
    starts = [np.tile(single.phi, (k, k, 1))]
    rng = np.random.default_rng(seed)
    starts += [starts[0] + _random_field(rng, grid.nn, amplitude) for _ in range(n_starts)]
    best, energies = None, []
    for x0 in starts:
        try:
            s = solve_corrector(model, cb, F, grid, opts, mu=mu, x0=x0.ravel())
        except (TrustRegionExceeded, NotConverged, LineSearchStall) as exc:
            log.info("multi-cell start failed: %s", exc)
            continue
        energies.append(s.w_energy)
        if best is None or s.w_energy < best.w_energy:
            best = s
    if best is None:
        raise NotConverged("no multi-cell start converged")
    return MultiCellResult(k, best.w_energy, energies, best)
