"""Preconditioned CG with curvature monitoring and a damped Newton driver."""

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class NegativeCurvature(RuntimeError):
    """CG met a direction ``p`` with ``p^T A p <= 0``."""


class LineSearchStall(RuntimeError):
    pass


class NotConverged(RuntimeError):
    pass


def pcg(matvec, b, precond=None, x0=None, rtol=1e-10, atol=0.0, maxiter=2000, project=None):
    """Solve ``A x = b`` for symmetric ``A`` given as a matvec on flat arrays.

    ``project`` (optional) is applied to residuals and search directions, e.g.
    to stay in the zero-mean subspace.  Raises :class:`NegativeCurvature` when
    ``A`` is not positive definite along a search direction, and
    :class:`NotConverged` after ``maxiter`` iterations.
    """
    proj = project or (lambda v: v)
    M = precond or (lambda v: v)
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = proj(b - matvec(x)) if x0 is not None else proj(b.copy())
    bnorm = np.linalg.norm(proj(b))
    tol = max(rtol * bnorm, atol)
    if np.linalg.norm(r) <= tol:
        return x, 0
    z = proj(M(r))
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = matvec(p)
        curv = p @ Ap
        if curv <= 0:
            raise NegativeCurvature(f"p^T A p = {curv:.3e} at CG iteration {it}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        r = proj(r)
        if np.linalg.norm(r) <= tol:
            return x, it
        z = proj(M(r))
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NotConverged(f"CG: residual {np.linalg.norm(r):.3e} > {tol:.3e} after {maxiter} iterations")


@dataclass
class NewtonInfo:
    iterations: int = 0
    residual: float = np.inf
    energy: float = np.nan
    cg_iterations: list = field(default_factory=list)


def newton(fun, grad, solve, x0, gtol=1e-10, maxit=60, c_armijo=1e-4, max_halvings=40,
           project=None, label="newton"):
    """Minimize ``fun`` by Newton steps with Armijo backtracking (halving).

    ``solve(x, g)`` returns ``(s, n_cg)`` with ``H(x) s = -g``.  Stops when the
    infinity norm of the (projected) gradient is at most ``gtol``.
    """
    proj = project or (lambda v: v)
    x = proj(x0.copy()) if project else x0.copy()
    info = NewtonInfo()
    E = fun(x)
    for it in range(maxit + 1):
        g = proj(grad(x))
        gn = float(np.max(np.abs(g)))
        info.iterations, info.residual, info.energy = it, gn, E
        log.debug("%s it=%d E=%.15g |g|=%.3e", label, it, E, gn)
        if gn <= gtol:
            return x, info
        if it == maxit:
            break
        s, ncg = solve(x, g)
        s = proj(s)
        info.cg_iterations.append(ncg)
        slope = float(g @ s)
        if slope >= 0:
            raise LineSearchStall(f"{label}: not a descent direction (slope {slope:.3e})")
        # at roundoff level the energy cannot resolve the decrease; take the full step
        if -slope <= 1e-13 * max(1.0, abs(E)):
            x = proj(x + s)
            E = fun(x)
            continue
        t = 1.0
        for _ in range(max_halvings):
            xt = x + t * s
            Et = fun(xt)
            if Et <= E + c_armijo * t * slope:
                break
            t *= 0.5
        else:
            raise LineSearchStall(f"{label}: Armijo failed at iteration {it} (|g| = {gn:.3e})")
        x, E = proj(xt), Et
    raise NotConverged(f"{label}: |g| = {info.residual:.3e} after {maxit} iterations")
