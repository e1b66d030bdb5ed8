"""Homogenized density: values, derivatives, certificates and cell comparisons."""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .cell import (CellOptions, TrustRegionExceeded, multi_cell, solve_corrector,
                   solve_linearized)
from .fem import PeriodicGrid

BASIS = np.eye(4).reshape(4, 2, 2)


@dataclass
class HomogenizedPoint:
    F: np.ndarray
    w_hom: float
    dw_hom: np.ndarray = None
    d2w_hom: np.ndarray = None
    grid_n: int = 0
    k: int = 1
    residual: float = np.nan
    max_dist_SO: float = np.nan
    null_lagrangian_gap: float = np.nan
    route_gap: float = np.nan
    solution: object = field(default=None, repr=False)


def _grid(grid):
    return grid if isinstance(grid, PeriodicGrid) else PeriodicGrid(int(grid))


def w_hom(model, cb, F, grid, opts=None, mu=None, x0=None):
    """``W_hom(F)`` by the single-cell formula; ``grid`` is a grid or a cell count."""
    grid = _grid(grid)
    F = np.asarray(F, dtype=float)
    sol = solve_corrector(model, cb, F, grid, opts, mu=mu, x0=x0)
    gap = abs((sol.energy - sol.mu * T.det(F)) - sol.w_energy)
    return HomogenizedPoint(F=F, w_hom=sol.w_energy, grid_n=grid.n, k=grid.k, residual=sol.residual,
                            max_dist_SO=sol.max_dist, null_lagrangian_gap=float(gap), solution=sol)


def dw_hom(model, cb, F, grid, point=None, opts=None, mu=None):
    """``DW_hom(F) = mean_Y DW(y, F + grad phi)``; returns the updated point."""
    point = point or w_hom(model, cb, F, grid, opts, mu)
    sol = point.solution
    g = sol.grid()
    a = model.stiffness(g.quad_points())
    point.dw_hom = g.integrate(model.dw_a(a, sol.F + sol.grad_phi)) / g.volume()
    return point


def d2w_hom(model, cb, F, grid, point=None, opts=None, mu=None, basis=BASIS):
    """``D^2 W_hom(F)`` from the linearized cell problems along ``basis``.

    Two assemblies are formed: the ``D^2 W`` form at the linearized minimizers
    and the ``D^2 Wbar`` form minus ``mu D^2 det(F)``.  The first is returned;
    their largest difference is stored in ``point.route_gap``.
    """
    point = point or w_hom(model, cb, F, grid, opts, mu)
    sol = point.solution
    g = sol.grid()
    a = model.stiffness(g.quad_points())
    S = sol.F + sol.grad_phi
    Lw = model.d2w_a(a, S)
    Lb = Lw + sol.mu * T.d2det(S)
    Hs = []
    for G in basis:
        lin = solve_linearized(model, sol, G, g)
        Hs.append(G + g.grad(lin.dphi))
    nb = len(basis)
    direct = np.empty((nb, nb))
    bar = np.empty((nb, nb))
    vol = g.volume()
    for p in range(nb):
        Lp_w = np.einsum("...abcd,...cd->...ab", Lw, Hs[p])
        Lp_b = np.einsum("...abcd,...cd->...ab", Lb, Hs[p])
        for q in range(nb):
            direct[p, q] = g.integrate(np.sum(Lp_w * Hs[q], axis=(-2, -1))) / vol
            bar[p, q] = g.integrate(np.sum(Lp_b * Hs[q], axis=(-2, -1))) / vol
    D2det = T.d2det(sol.F)
    bar -= sol.mu * np.einsum("pab,abcd,qcd->pq", basis, D2det, basis)
    direct = 0.5 * (direct + direct.T)
    bar = 0.5 * (bar + bar.T)
    point.route_gap = float(np.max(np.abs(direct - bar)))
    if nb == 4 and np.allclose(basis, BASIS):
        point.d2w_hom = direct.reshape(2, 2, 2, 2)
    else:
        point.d2w_hom = direct
    point.d2w_hom_bar = bar
    return point


def homogenized_point(model, cb, F, grid, opts=None, mu=None):
    """Value, gradient and Hessian of ``W_hom`` at ``F`` from a single corrector solve."""
    p = w_hom(model, cb, F, grid, opts, mu)
    dw_hom(model, cb, F, grid, point=p)
    d2w_hom(model, cb, F, grid, point=p)
    return p


def rank_one_certificate(D2):
    """``(c, a, b)``: minimum of ``D2[a (x) b, a (x) b]`` over unit ``a``, ``b``."""
    return T.rank_one_min(np.asarray(D2).reshape(2, 2, 2, 2))


def single_vs_multicell(model, cb, F, n, k_list=(2, 3), n_starts=8, seed=0, amplitude=1e-2,
                        opts=None, mu=None):
    """Energies per unit volume on ``kY`` (``k n`` cells per side) against ``k = 1``."""
    one = solve_corrector(model, cb, F, PeriodicGrid(n, 1), opts, mu=mu)
    rows = {1: one.w_energy}
    found = {1: [one.w_energy]}
    for k in k_list:
        res = multi_cell(model, cb, F, n, k, n_starts=n_starts, seed=seed + k, amplitude=amplitude,
                         opts=opts, single=one, mu=mu)
        rows[k] = res.energy
        found[k] = res.energies
    e1 = rows[1]
    rel = {k: abs(rows[k] - e1) / max(e1, 1e-8) for k in k_list}
    return {"F": np.asarray(F).tolist(), "energies": rows, "gaps": {k: e1 - rows[k] for k in k_list},
            "relative_gaps": rel, "local_minima": found}


def sample_near_identity(rng, n, radius, theta=True):
    """``F = R(theta)(I + E)`` with ``|E| <= radius`` uniform in the ball of matrices."""
    E = rng.normal(size=(n, 2, 2))
    E /= np.linalg.norm(E.reshape(n, 4), axis=1)[:, None, None]
    E *= radius * rng.uniform(size=n)[:, None, None] ** 0.25
    R = T.random_rotation(rng, 2, size=n) if theta else np.broadcast_to(np.eye(2), (n, 2, 2))
    return R @ (np.eye(2) + E)


def trust_radius(model, cb, n=16, radii=(0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.08, 0.1),
                 n_dirs=8, seed=0, opts=None):
    """Largest tested ``dist_SO(F)`` for which every sampled corrector stays in the exact-match region."""
    rng = np.random.default_rng(seed)
    opts = opts or CellOptions(convex_fallback=False)
    best = 0.0
    for r in radii:
        dirs = rng.normal(size=(n_dirs, 2, 2))
        ok = True
        for D in dirs:
            S = 0.5 * (D + D.T)
            S *= r / np.linalg.norm(S)
            F = np.eye(2) + S  # dist_SO(I + S) = |S| for small symmetric S
            try:
                solve_corrector(model, cb, F, PeriodicGrid(n), opts)
            except (TrustRegionExceeded, RuntimeError):
                ok = False
                break
        if not ok:
            break
        best = r
    return best
