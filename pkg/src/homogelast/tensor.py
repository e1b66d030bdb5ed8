"""Small dense matrix calculus for deformation gradients.

Everything here is vectorized over leading axes: a batch of matrices has
shape ``(..., d, d)`` and a fourth-order tensor has shape ``(..., d, d, d, d)``
with the convention ``Q[G, H] = sum Q[i, j, k, l] G[i, j] H[k, l]``.
The Frobenius norm is used throughout.
"""

import numpy as np
from scipy.optimize import minimize

# rotation generator, R(theta) = cos(theta) I + sin(theta) J
J2 = np.array([[0.0, -1.0], [1.0, 0.0]])


def rotation(theta):
    """Rotation matrix R(theta) in SO(2); vectorized over ``theta``."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty(theta.shape + (2, 2))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def random_rotation(rng, d=2, size=None):
    """Haar-distributed rotations."""
    if d == 2:
        return rotation(rng.uniform(0.0, 2 * np.pi, size=size))
    shape = () if size is None else np.atleast_1d(size)
    A = rng.standard_normal(tuple(shape) + (d, d))
    Qm, Rm = np.linalg.qr(A)
    Qm = Qm * np.sign(np.diagonal(Rm, axis1=-2, axis2=-1))[..., None, :]
    det = np.linalg.det(Qm)
    Qm[..., :, -1] *= det[..., None]
    return Qm


def frob(A):
    return np.sqrt(np.sum(np.asarray(A) ** 2, axis=(-2, -1)))


def inner(A, B):
    return np.sum(A * B, axis=(-2, -1))


def conformal_part(F):
    """The pair ``(tr F, F21 - F12)``; its length is max_theta <F, R(theta)>."""
    F = np.asarray(F, dtype=float)
    s = F[..., 0, 0] + F[..., 1, 1]
    t = F[..., 1, 0] - F[..., 0, 1]
    return s, t


def polar_rotation(F):
    """Rotation closest to ``F`` (sign-corrected polar factor).

    For d = 2 the closest rotation maximizes <F, R(theta)>, which gives the
    closed form theta* = atan2(F21 - F12, F11 + F22).  It is not unique when
    F11 + F22 = F21 - F12 = 0; the identity branch (theta* = 0) is returned.
    """
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    if d == 2:
        s, t = conformal_part(F)
        return rotation(np.arctan2(t, s))
    U, _, Vt = np.linalg.svd(F)
    sign = np.sign(np.linalg.det(U @ Vt))
    sign = np.where(sign == 0, 1.0, sign)
    U = U.copy()
    U[..., :, -1] *= sign[..., None]
    return U @ Vt


def dist_SO(F):
    """Frobenius distance from ``F`` to SO(d)."""
    F = np.asarray(F, dtype=float)
    return frob(F - polar_rotation(F))


def det(F):
    return np.linalg.det(np.asarray(F, dtype=float))


def cof(F):
    """Cofactor matrix, so that D det(F)[G] = <cof F, G>."""
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    if d == 2:
        out = np.empty_like(F)
        out[..., 0, 0] = F[..., 1, 1]
        out[..., 0, 1] = -F[..., 1, 0]
        out[..., 1, 0] = -F[..., 0, 1]
        out[..., 1, 1] = F[..., 0, 0]
        return out
    # d = 3: columns of cof are cross products of the other two columns of F^T
    r = [F[..., i, :] for i in range(3)]
    out = np.empty_like(F)
    out[..., 0, :] = np.cross(r[1], r[2])
    out[..., 1, :] = np.cross(r[2], r[0])
    out[..., 2, :] = np.cross(r[0], r[1])
    return out


def _levi_civita3():
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    return eps


_EPS3 = _levi_civita3()

# D^2 det in d = 2 is constant: D^2 det[G, H] = G11 H22 + G22 H11 - G12 H21 - G21 H12
D2DET2 = np.zeros((2, 2, 2, 2))
D2DET2[0, 0, 1, 1] = D2DET2[1, 1, 0, 0] = 1.0
D2DET2[0, 1, 1, 0] = D2DET2[1, 0, 0, 1] = -1.0


def d2det(F):
    """Second derivative of det as a 4-tensor (constant for d = 2)."""
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    if d == 2:
        return np.broadcast_to(D2DET2, F.shape[:-2] + (2, 2, 2, 2)).copy()
    # det F = 1/6 eps_ijk eps_lmn F_il F_jm F_kn
    return np.einsum("ijk,lmn,...kn->...iljm", _EPS3, _EPS3, F)


def det_calculus(F):
    """Return ``(det F, cof F, D^2 det(F))``."""
    return det(F), cof(F), d2det(F)


def apply4(Q, G, H=None):
    """Bilinear form ``Q[G, H]`` (``H = G`` by default)."""
    if H is None:
        H = G
    return np.einsum("...ijkl,...ij,...kl->...", Q, G, H)


def as_matrix(Q):
    """Flatten a 4-tensor to the ``(d*d, d*d)`` matrix of its quadratic form."""
    d = Q.shape[-1]
    return Q.reshape(Q.shape[:-4] + (d * d, d * d))


def identity4(d=2):
    return np.eye(d * d).reshape(d, d, d, d)


def outer(a, b):
    return np.einsum("...i,...j->...ij", a, b)


def _rank_one_values(Q, a, b):
    # Q[a x b, a x b] for arrays a (..., d), b (..., d)
    return np.einsum("ijkl,...i,...j,...k,...l->...", Q, a, b, a, b)


def rank_one_min(Q, resolution=720, refine=True):
    """Minimize ``Q[a x b, a x b]`` over unit vectors ``a``, ``b``.

    For d = 2 both vectors are scanned on ``resolution`` angles in [0, pi)
    (the form is even in each of them), the best grid points are then
    polished by a local quasi-Newton search in the two angles.  For d = 3
    ``a`` runs over a Fibonacci sphere and ``b`` is chosen exactly as the
    lowest eigenvector of the reduced 3x3 form.

    Returns ``(value, a, b)``; re-evaluating the form at ``(a, b)`` gives
    ``value`` exactly.
    """
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[0]
    Qs = 0.5 * (Q + Q.transpose(2, 3, 0, 1))
    if d == 2:
        ang = np.arange(resolution) * (np.pi / resolution)
        u = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        # M[s, j, l] = sum_ik Q_ijkl a_i a_k
        M = np.einsum("ijkl,si,sk->sjl", Qs, u, u)
        vals = np.einsum("sjl,tj,tl->st", M, u, u)
        flat = np.argsort(vals, axis=None)[:4]
        cands = [np.unravel_index(i, vals.shape) for i in flat]

        def fun(x):
            a = np.array([np.cos(x[0]), np.sin(x[0])])
            b = np.array([np.cos(x[1]), np.sin(x[1])])
            return float(_rank_one_values(Qs, a, b))

        best = None
        for si, ti in cands:
            x0 = np.array([ang[si], ang[ti]])
            if refine:
                res = minimize(fun, x0, method="BFGS", options={"gtol": 1e-13})
                x = res.x if res.fun <= fun(x0) else x0
            else:
                x = x0
            v = fun(x)
            if best is None or v < best[0]:
                best = (v, x)
        x = best[1]
        a = np.array([np.cos(x[0]), np.sin(x[0])])
        b = np.array([np.cos(x[1]), np.sin(x[1])])
    else:
        n = resolution * 8
        k = np.arange(n) + 0.5
        phi = np.arccos(1 - 2 * k / n)
        th = np.pi * (1 + 5 ** 0.5) * k
        u = np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], -1)
        M = np.einsum("ijkl,si,sk->sjl", Qs, u, u)
        w = np.linalg.eigvalsh(0.5 * (M + M.transpose(0, 2, 1)))[:, 0]
        order = np.argsort(w)[:4]

        def lowest(avec):
            avec = avec / np.linalg.norm(avec)
            Ma = np.einsum("ijkl,i,k->jl", Qs, avec, avec)
            ev, V = np.linalg.eigh(0.5 * (Ma + Ma.T))
            return ev[0], avec, V[:, 0]

        best = None
        for i in order:
            a0 = u[i]
            if refine:
                res = minimize(lambda z: lowest(z)[0], a0, method="Nelder-Mead",
                               options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 4000})
                a0 = res.x
            v, a, b = lowest(a0)
            if best is None or v < best[0]:
                best = (v, a, b)
        a, b = best[1], best[2]
    value = float(_rank_one_values(Qs, a, b))
    return value, a, b
