"""Single-well stored-energy densities ``W(y, F) = a(y) (dist^2 + dist^p)``.

``dist`` is the distance of ``F`` to SO(d).  The periodic stiffness ``a``
is either a smooth profile on the torus or piecewise constant in ``y_1``
(a layered composite).  All evaluations broadcast a batch of points
``y`` of shape ``(..., d)`` against matrices ``F`` of shape ``(..., d, d)``.
Every method also has an ``*_a`` twin taking the stiffness values directly,
which is what the grid solvers use after evaluating ``a`` once per
quadrature point.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass(frozen=True)
class DensityParams:
    alpha: float = 0.05
    p: float = 4.0
    phase_stiffness: tuple = (1.0,)
    d: int = 2

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.p < self.d:
            raise ValueError(f"p = {self.p} is below the dimension d = {self.d}")
        if any(not a > 0 for a in self.phase_stiffness):
            raise ValueError("phase stiffness must be positive")


def smooth_modulation(y, contrast=0.5):
    """Default smooth profile ``1 + c (1 + sin(2 pi y1) sin(2 pi y2))``."""
    y = np.asarray(y, dtype=float)
    return 1.0 + contrast * (1.0 + np.sin(2 * np.pi * y[..., 0]) * np.sin(2 * np.pi * y[..., 1]))


def _dist_terms(F):
    """Return ``(D, Rm, m)``: the offset ``F - R``, the polar rotation, and
    ``m = max_R <F, R>`` (d = 2 only; ``m`` is None for d = 3)."""
    d = F.shape[-1]
    Rm = T.polar_rotation(F)
    if d == 2:
        s, t = T.conformal_part(F)
        m = np.hypot(s, t)
    else:
        m = None
    return F - Rm, Rm, m


class DensityModel:
    """Periodic single-well density.

    Use :func:`make_well_density` or :func:`make_layered` to build one.
    """

    def __init__(self, params, kind, modulation=None, breakpoints=None, name=None):
        self.params = params
        self.kind = kind
        self.alpha = params.alpha
        self.p = float(params.p)
        self.d = params.d
        self.modulation = modulation
        self.breakpoints = None if breakpoints is None else np.asarray(breakpoints, dtype=float)
        self.phase_stiffness = np.asarray(params.phase_stiffness, dtype=float)
        self.name = name or kind
        self._scale = 1.0

    # -- heterogeneity -------------------------------------------------------
    def phase_index(self, y1):
        """Phase of ``y1`` (0-based); a breakpoint belongs to the phase on its left."""
        y1 = np.mod(np.asarray(y1, dtype=float), 1.0)
        idx = np.searchsorted(self.breakpoints, y1, side="left")
        n_phase = len(self.breakpoints) - 1
        # y1 = 0 is identified with the right end t_N = 1, left phase N
        return np.where(idx == 0, n_phase, idx) - 1

    def stiffness(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "layered":
            return self.phase_stiffness[self.phase_index(y[..., 0])] * self._scale
        if self.kind == "homogeneous":
            return np.full(y.shape[:-1], self.phase_stiffness[0] * self._scale)
        return self.modulation(np.mod(y, 1.0)) * self._scale

    @property
    def is_homogeneous(self):
        return self.kind == "homogeneous" or (
            self.kind == "layered" and np.ptp(self.phase_stiffness) == 0.0)

    def scaled(self, factor):
        """Copy with the energy multiplied by ``factor`` (used as a negative control)."""
        other = DensityModel(self.params, self.kind, self.modulation, self.breakpoints, self.name)
        other._scale = self._scale * factor
        return other

    # -- evaluation with given stiffness ---------------------------------------
    def w_a(self, a, F):
        F = np.asarray(F, dtype=float)
        D, _, _ = _dist_terms(F)
        r = np.sum(D * D, axis=(-2, -1))
        return a * (r + r ** (self.p / 2))

    def dw_a(self, a, F):
        F = np.asarray(F, dtype=float)
        D, _, _ = _dist_terms(F)
        r = np.sum(D * D, axis=(-2, -1))
        coef = np.asarray(a * (1.0 + (self.p / 2) * _pow(r, self.p / 2 - 1)))
        return 2.0 * coef[..., None, None] * D

    def d2w_a(self, a, F):
        F = np.asarray(F, dtype=float)
        if F.shape[-1] != 2:
            return self._d2w_fd(a, F)
        D, Rm, m = _dist_terms(F)
        r = np.sum(D * D, axis=(-2, -1))
        q = self.p / 2
        RJ = Rm @ T.J2
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_m = np.where(m > 0, 1.0 / m, 0.0)
        I4 = T.identity4(2)
        d2r = 2.0 * I4 - 2.0 * inv_m[..., None, None, None, None] * np.einsum("...ij,...kl->...ijkl", RJ, RJ)
        c1 = 1.0 + q * _pow(r, q - 1)
        c2 = 4.0 * q * (q - 1) * _pow(r, q - 2)
        DD = np.einsum("...ij,...kl->...ijkl", D, D)
        out = c1[..., None, None, None, None] * d2r + c2[..., None, None, None, None] * DD
        return np.asarray(a)[..., None, None, None, None] * out

    def _d2w_fd(self, a, F, h=1e-6):
        d = F.shape[-1]
        out = np.empty(F.shape + (d, d))
        for k in range(d):
            for l in range(d):
                E = np.zeros((d, d))
                E[k, l] = h
                out[..., k, l] = (self.dw_a(a, F + E) - self.dw_a(a, F - E)) / (2 * h)
        # out[..., i, j, k, l] = d(DW_ij)/dF_kl
        return 0.5 * (out + np.swapaxes(np.swapaxes(out, -4, -2), -3, -1))

    # -- evaluation at points y ----------------------------------------------
    def W(self, y, F):
        return self.w_a(self.stiffness(y), F)

    def DW(self, y, F):
        return self.dw_a(self.stiffness(y), F)

    def D2W(self, y, F):
        return self.d2w_a(self.stiffness(y), F)

    # W + mu det
    def wbar_a(self, a, F, mu):
        return self.w_a(a, F) + mu * T.det(F)

    def dwbar_a(self, a, F, mu):
        return self.dw_a(a, F) + mu * T.cof(F)

    def d2wbar_a(self, a, F, mu):
        return self.d2w_a(a, F) + mu * T.d2det(F)

    def Wbar(self, y, F, mu):
        return self.wbar_a(self.stiffness(y), F, mu)

    def DWbar(self, y, F, mu):
        return self.dwbar_a(self.stiffness(y), F, mu)

    def D2Wbar(self, y, F, mu):
        return self.d2wbar_a(self.stiffness(y), F, mu)

    def to_dict(self):
        out = {"kind": self.kind, "alpha": self.alpha, "p": self.p,
               "phase_stiffness": self.phase_stiffness.tolist()}
        if self.breakpoints is not None:
            out["breakpoints"] = self.breakpoints.tolist()
        return out


def _pow(r, e):
    """``r**e`` with the convention ``0**e = 0`` for negative ``e``."""
    r = np.asarray(r, dtype=float)
    if e >= 0:
        return r ** e
    with np.errstate(divide="ignore"):
        return np.where(r > 0, r ** e, 0.0)


def make_well_density(params, modulation=None):
    """Density ``a(y)(dist^2 + dist^p)``.

    ``modulation`` is a callable periodic profile, a positive constant, or
    None for :func:`smooth_modulation`.
    """
    if modulation is None:
        modulation = smooth_modulation
    if np.isscalar(modulation):
        a0 = float(modulation)
        if not a0 > 0:
            raise ValueError("modulation must be positive")
        p = DensityParams(params.alpha, params.p, (a0,), params.d)
        return DensityModel(p, "homogeneous")
    g = (np.arange(64) + 0.5) / 64
    yy = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
    if np.min(modulation(yy)) <= 0:
        raise ValueError("modulation must be positive on the cell")
    return DensityModel(params, "smooth", modulation=modulation)


def make_layered(breakpoints, phase_stiffness, alpha=0.05, p=4.0, d=2):
    """Laminate with phases of stiffness ``a_i`` on ``(t_{i-1}, t_i)`` in ``y_1``."""
    t = np.asarray(breakpoints, dtype=float)
    if t.ndim != 1 or len(t) < 2 or t[0] != 0.0 or t[-1] != 1.0:
        raise ValueError("breakpoints must run from 0 to 1")
    if np.any(np.diff(t) <= 0):
        raise ValueError("breakpoints must be strictly increasing")
    if len(phase_stiffness) != len(t) - 1:
        raise ValueError("need one stiffness per layer")
    params = DensityParams(alpha, p, tuple(float(a) for a in phase_stiffness), d)
    return DensityModel(params, "layered", breakpoints=t)


# -- sampled validity certification -------------------------------------------

@dataclass
class ValidityReport:
    margins: dict
    n_samples: int
    seed: int
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        tol = {"W2": -1e-10}
        return all(v >= tol.get(k, -1e-12) for k, v in self.margins.items())


def sample_ball(rng, n, radius, d=2):
    """Uniform samples in the Frobenius ball of ``d x d`` matrices."""
    dim = d * d
    x = rng.standard_normal((n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    x *= radius * rng.uniform(size=(n, 1)) ** (1.0 / dim)
    return x.reshape(n, d, d)


def sample_near_SO(rng, n, radius, d=2):
    """Samples ``R + E`` with ``|E| < radius`` (so ``dist(F, SO(d)) < radius``)."""
    R = T.random_rotation(rng, d, n)
    return R + sample_ball(rng, n, radius, d)


def certify(model, n_samples=2000, seed=0, radius=5.0, fd_step=1e-4):
    """Sample the growth, non-degeneracy, frame-indifference and regularity bounds.

    Margins (``>= 0`` means satisfied):

    * ``W1``: ``min W - (alpha |F|^p - 1/alpha)`` on the ball of ``radius``
    * ``W3``: ``min W - alpha dist^2``; also ``W(R) = 0`` at rotations
    * ``W2``: ``-max |W(RF) - W(F)|``
    * ``W4``: ``1/alpha - max(|W|, |DW|, |D^2W|, |D^3W|)`` on ``U_alpha``, the third
      derivative by central differences of the Hessian along random unit directions.
    """
    rng = np.random.default_rng(seed)
    d, alpha, p = model.d, model.alpha, model.p
    F = sample_ball(rng, n_samples, radius, d)
    y = rng.uniform(size=(n_samples, d))
    W = model.W(y, F)
    dist = T.dist_SO(F)
    normF = T.frob(F)
    m1 = np.min(W - (alpha * normF ** p - 1.0 / alpha))
    m3 = np.min(W - alpha * dist ** 2)
    R = T.random_rotation(rng, d, n_samples)
    m3 = min(m3, -np.max(np.abs(model.W(y, R))))
    m2 = -np.max(np.abs(model.W(y, R @ F) - W) / np.maximum(1.0, np.abs(W)))

    F0 = sample_near_SO(rng, n_samples, alpha, d)
    G = rng.standard_normal(F0.shape)
    G /= T.frob(G)[:, None, None]
    a = model.stiffness(y)
    H = model.d2w_a(a, F0)
    hmat = T.as_matrix(H)
    c2 = np.max(np.linalg.norm(hmat, ord=2, axis=(-2, -1)))
    c1 = np.max(T.frob(model.dw_a(a, F0)))
    c0 = np.max(np.abs(model.w_a(a, F0)))
    Hp = model.d2w_a(a, F0 + fd_step * G)
    Hm = model.d2w_a(a, F0 - fd_step * G)
    third = (T.apply4(Hp, G) - T.apply4(Hm, G)) / (2 * fd_step)
    c3 = np.max(np.abs(third))
    m4 = 1.0 / alpha - max(c0, c1, c2, c3)
    margins = {"W1": float(m1), "W2": float(m2), "W3": float(m3), "W4": float(m4)}
    details = {"C0": float(c0), "C1": float(c1), "C2": float(c2), "C3": float(c3)}
    return ValidityReport(margins, n_samples, seed, details)
