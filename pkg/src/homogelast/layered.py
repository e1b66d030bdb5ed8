"""Exact cell solutions for laminates.

For a density depending on ``y_1`` only, the periodic corrector is a
function of ``y_1`` that is affine in each layer, ``grad phi = c_i (x) e_1``.
The slopes minimize ``sum_i theta_i Wbar_i(F + c_i (x) e_1)`` subject to
``sum_i theta_i c_i = 0``; we eliminate ``c_N`` and run a batched Newton
iteration, so many macroscopic gradients can be processed at once.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T

CHUNK = 1 << 16  # points per batched Newton solve

def _phases(model):
    if model.kind == "layered":
        t = model.breakpoints
        return np.diff(t), model.phase_stiffness * model._scale
    if model.kind == "homogeneous":
        return np.array([1.0]), model.phase_stiffness[:1] * model._scale
    raise ValueError("the laminate oracle needs a layered or homogeneous model")


def _rank1(c):
    """``c (x) e_1`` for vectors ``c[..., 2]``."""
    out = np.zeros(c.shape[:-1] + (2, 2))
    out[..., :, 0] = c
    return out


def _full_slopes(x, theta):
    cN = -np.einsum("i,...ia->...a", theta[:-1], x) / theta[-1]
    return np.concatenate([x, cN[..., None, :]], axis=-2)


def solve_slopes(model, F, mu, x0=None, tol=1e-13, maxit=60):
    """Optimal layer slopes for a batch ``F[..., 2, 2]``; returns ``(c, residual, iterations)``
    with ``c[..., N, 2]``."""
    theta, a = _phases(model)
    F = np.asarray(F, dtype=float)
    shape = F.shape[:-2]
    Ff = F.reshape(-1, 2, 2)
    M, N = len(Ff), len(theta)
    if N == 1:
        return np.zeros(shape + (1, 2)), 0.0, 0
    if M > CHUNK:
        # bounded memory: the Newton temporaries are O(N^2) 4-tensors per point
        x0f = None if x0 is None else np.asarray(x0, dtype=float).reshape(M, N, 2)
        c = np.empty((M, N, 2))
        res, its = 0.0, 0
        for lo in range(0, M, CHUNK):
            sl = slice(lo, lo + CHUNK)
            c[sl], r, i = solve_slopes(model, Ff[sl], mu, None if x0f is None else x0f[sl], tol, maxit)
            res, its = max(res, r), max(its, i)
        return c.reshape(shape + (N, 2)), res, its
    x = np.zeros((M, N - 1, 2)) if x0 is None else np.asarray(x0, dtype=float).reshape(M, N, 2)[:, :-1].copy()

    def parts(x):
        c = _full_slopes(x, theta)
        G = Ff[:, None] + _rank1(c)
        return c, G

    def energy(x):
        _, G = parts(x)
        return np.einsum("i,mi->m", theta, model.wbar_a(a[None], G, mu))

    def gradient(x):
        _, G = parts(x)
        s = model.dwbar_a(a[None], G, mu)[..., :, 0]  # (M, N, 2)
        return theta[None, :-1, None] * (s[:, :-1] - s[:, -1:]), s

    E = energy(x)
    it = 0
    for it in range(maxit + 1):
        g, _ = gradient(x)
        gn = np.max(np.abs(g), axis=(1, 2))
        if np.all(gn <= tol):
            break
        _, G = parts(x)
        L = model.d2wbar_a(a[None], G, mu)
        A = L[:, :, :, 0, :, 0]  # (M, N, 2, 2)
        n = N - 1
        H = np.zeros((M, n, 2, n, 2))
        for i in range(n):
            H[:, i, :, i, :] += theta[i] * A[:, i]
            for j in range(n):
                H[:, i, :, j, :] += theta[i] * theta[j] / theta[-1] * A[:, -1]
        H = H.reshape(M, 2 * n, 2 * n)
        step = -np.linalg.solve(H, g.reshape(M, 2 * n, 1))[..., 0].reshape(M, n, 2)
        active = gn > tol
        t = np.where(active, 1.0, 0.0)
        slope = np.einsum("mia,mia->m", g, step)
        for _ in range(50):
            En = energy(x + t[:, None, None] * step)
            ok = (En <= E + 1e-4 * t * slope) | (np.abs(t * slope) <= 1e-15 * np.maximum(1, np.abs(E)))
            if ok.all():
                break
            t = np.where(ok, t, 0.5 * t)
        x = x + t[:, None, None] * step
        E = energy(x)
    g, _ = gradient(x)
    c = _full_slopes(x, theta)
    return c.reshape(shape + (N, 2)), float(np.max(np.abs(g))), it


@dataclass
class LayeredCorrector:
    F: np.ndarray
    breakpoints: np.ndarray
    slopes: np.ndarray      # c_i, grad phi = c_i (x) e_1 in layer i
    offsets: np.ndarray     # phi(t_{i-1}) = d_i
    normal_flux: np.ndarray  # DWbar_i(F + c_i (x) e_1) e_1, equal across layers
    flux_residual: float     # max spread of the normal flux over the layers
    residual: float
    w_hom: float
    energy_bar: float

    def phi(self, y1):
        y1 = np.mod(np.asarray(y1, dtype=float), 1.0)
        t = self.breakpoints
        idx = np.clip(np.searchsorted(t, y1, side="right") - 1, 0, len(t) - 2)
        return self.offsets[idx] + self.slopes[idx] * (y1 - t[idx])[..., None]

    def grad_phi(self, y1, model):
        idx = model.phase_index(y1)
        return _rank1(self.slopes[idx])


def solve_layered(model, F, mu=0.0, tol=1e-13):
    """Exact laminate corrector at one macroscopic gradient ``F``."""
    theta, a = _phases(model)
    F = np.asarray(F, dtype=float)
    c, res, _ = solve_slopes(model, F[None], mu, tol=tol)
    c = c[0]
    G = F[None] + _rank1(c)
    flux = model.dwbar_a(a, G, mu)[:, :, 0]
    spread = float(np.max(np.abs(flux - flux[-1:])))
    t = model.breakpoints if model.kind == "layered" else np.array([0.0, 1.0])
    d = np.zeros_like(c)
    for i in range(1, len(theta)):
        d[i] = d[i - 1] + c[i - 1] * theta[i - 1]
    mean = np.einsum("i,ia->a", theta, d + 0.5 * c * theta[:, None])
    d -= mean
    w_hom = float(theta @ model.w_a(a, G))
    e_bar = float(theta @ model.wbar_a(a, G, mu))
    return LayeredCorrector(F, t, c, d, flux[-1], spread, res, w_hom, e_bar)


def layered_hom(model, F, mu=0.0, order=2, x0=None):
    """``W_hom``, ``DW_hom`` and ``D^2 W_hom`` for a batch of gradients.

    ``D^2 W_hom[G, H] = sum_i theta_i D^2 W_i[G + d_i(G) (x) e_1, H]`` with the
    linearized slopes ``d_i(G)``; the det part drops out (it is a null
    Lagrangian), so these are the derivatives of the density without ``mu det``.
    Returns ``(W, DW, D2W, slopes)``.
    """
    theta, a = _phases(model)
    F = np.asarray(F, dtype=float)
    shape = F.shape[:-2]
    Ff = F.reshape(-1, 2, 2)
    c, _, _ = solve_slopes(model, Ff, mu, x0=x0)
    G = Ff[:, None] + _rank1(c)
    ab = a[None]
    W = np.einsum("i,mi->m", theta, model.w_a(ab, G))
    DW = np.einsum("i,mijk->mjk", theta, model.dw_a(ab, G))
    if order < 2:
        return W.reshape(shape), DW.reshape(shape + (2, 2)), None, c.reshape(shape + c.shape[-2:])
    L = model.d2w_a(ab, G)  # (M, N, 2, 2, 2, 2)
    N = len(theta)
    M = len(Ff)
    basis = np.eye(4).reshape(4, 2, 2)
    if N == 1:
        D2 = L[:, 0]
    else:
        Lb = L + mu * T.D2DET2  # same Schur complement either way; use the Wbar form
        A = Lb[:, :, :, 0, :, 0]
        n = N - 1
        H = np.zeros((M, n, 2, n, 2))
        for i in range(n):
            H[:, i, :, i, :] += theta[i] * A[:, i]
            for j in range(n):
                H[:, i, :, j, :] += theta[i] * theta[j] / theta[-1] * A[:, -1]
        H = H.reshape(M, 2 * n, 2 * n)
        # right-hand sides: -theta_i (L_i[G] - L_N[G]) e_1 for the four basis G
        LG = np.einsum("mnacd,kcd->mkna", Lb[:, :, :, 0], basis)  # L[G] e_1
        rhs = -(theta[None, None, :-1, None] * (LG[:, :, :-1] - LG[:, :, -1:]))
        rhs = rhs.reshape(M, 4, 2 * n).transpose(0, 2, 1)
        dsol = np.linalg.solve(H, rhs).transpose(0, 2, 1).reshape(M, 4, n, 2)
        dfull = _full_slopes(dsol, theta)  # (M, 4, N, 2)
        Gd = basis[None, :, None] + _rank1(dfull)  # (M, 4, N, 2, 2)
        D2 = np.einsum("i,mkiab,miabcd->mkcd", theta, Gd, L)
        D2 = D2.reshape(M, 2, 2, 2, 2)
        D2 = 0.5 * (D2 + np.moveaxis(D2, (1, 2), (3, 4)))
    return (W.reshape(shape), DW.reshape(shape + (2, 2)), D2.reshape(shape + (2, 2, 2, 2)),
            c.reshape(shape + c.shape[-2:]))
