"""Q1 finite elements on uniform square grids, periodic or with Dirichlet nodes.

Nodal vector fields are arrays ``(nn, nn, 2)``; quadrature fields are
``(ne, ne, 4, ...)`` with 2x2 Gauss points per cell.  Gradients follow
``(grad u)[a, b] = d u_a / d x_b``.  For periodic grids ``nn == ne`` and node
indices wrap; for Dirichlet grids ``nn == ne + 1``.
"""

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp

_G = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
# corner c = 2 * ci + cj, Gauss point g = 2 * gi + gj
CORNERS = [(0, 0), (0, 1), (1, 0), (1, 1)]
GAUSS = [(_G[i], _G[j]) for i in range(2) for j in range(2)]


def _shape():
    """Values ``N[c, g]`` and reference gradients ``dN[c, g, b]`` on the unit square."""
    N = np.empty((4, 4))
    dN = np.empty((4, 4, 2))
    for c, (ci, cj) in enumerate(CORNERS):
        for g, (x, y) in enumerate(GAUSS):
            fx = x if ci else 1 - x
            fy = y if cj else 1 - y
            N[c, g] = fx * fy
            dN[c, g, 0] = (1 if ci else -1) * fy
            dN[c, g, 1] = (1 if cj else -1) * fx
    return N, dN


NREF, DNREF = _shape()


class StructuredQ1:
    """Uniform Q1 grid of ``ne x ne`` cells of width ``h`` starting at ``origin``."""

    def __init__(self, ne, h, periodic, origin=(0.0, 0.0)):
        self.ne = int(ne)
        self.h = float(h)
        self.periodic = bool(periodic)
        self.nn = self.ne if periodic else self.ne + 1
        self.origin = np.asarray(origin, dtype=float)
        self.dN = DNREF / self.h
        self.w = self.h * self.h / 4.0

    @property
    def n_nodes(self):
        return self.nn * self.nn

    def nodes(self):
        x = self.origin[0] + self.h * np.arange(self.nn)
        y = self.origin[1] + self.h * np.arange(self.nn)
        return np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1)

    def quad_points(self):
        e = np.arange(self.ne)
        out = np.empty((self.ne, self.ne, 4, 2))
        for g, (x, y) in enumerate(GAUSS):
            out[:, :, g, 0] = self.origin[0] + self.h * (e[:, None] + x)
            out[:, :, g, 1] = self.origin[1] + self.h * (e[None, :] + y)
        return out

    def volume(self):
        return (self.ne * self.h) ** 2

    # -- nodal <-> quadrature ---------------------------------------------------
    def corner(self, u, c):
        ci, cj = CORNERS[c]
        if self.periodic:
            return np.roll(u, (-ci, -cj), axis=(0, 1))
        return u[ci:ci + self.ne, cj:cj + self.ne]

    def values(self, u):
        """Interpolate a nodal field to the quadrature points."""
        out = 0.0
        for c in range(4):
            out = out + np.einsum("g,ij...->ijg...", NREF[c], self.corner(u, c))
        return out

    def grad(self, u):
        out = np.zeros((self.ne, self.ne, 4) + u.shape[2:] + (2,))
        for c in range(4):
            uc = self.corner(u, c)
            out += np.einsum("gb,ij...->ijg...b", self.dN[c], uc)
        return out

    def _scatter(self, contribs):
        """Sum per-corner element contributions ``contribs[c]`` into nodes."""
        shape = contribs[0].shape[2:]
        if self.periodic:
            r = np.zeros((self.nn, self.nn) + shape)
            for c, (ci, cj) in enumerate(CORNERS):
                r += np.roll(contribs[c], (ci, cj), axis=(0, 1))
            return r
        r = np.zeros((self.nn, self.nn) + shape)
        for c, (ci, cj) in enumerate(CORNERS):
            r[ci:ci + self.ne, cj:cj + self.ne] += contribs[c]
        return r

    def div(self, P):
        """Weak divergence: ``r[node, a] = sum_q w P[q, a, b] dN_node[q, b]``."""
        return self._scatter([self.w * np.einsum("ijgab,gb->ija", P, self.dN[c]) for c in range(4)])

    def load(self, f):
        """Consistent load vector of a quadrature field ``f`` of shape ``(ne, ne, 4, 2)``."""
        return self._scatter([self.w * np.einsum("ijga,g->ija", f, NREF[c]) for c in range(4)])

    def integrate(self, q):
        return self.w * np.sum(q, axis=(0, 1, 2))

    def hessvec(self, L, v):
        return self.div(np.einsum("ijgabcd,ijgcd->ijgab", L, self.grad(v)))

    # -- sparse assembly ----------------------------------------------------------
    def element_matrices(self, L):
        """``Ke[i, j, A, a, C, c] = sum_g w L[g, a, b, c, d] dN[A, g, b] dN[C, g, d]``."""
        return self.w * np.einsum("ijgabcd,Agb,Cgd->ijAaCc", L, self.dN, self.dN, optimize=True)

    def stencil(self, L, chunk=64):
        """Nine-point block stencil ``S[i, j, di+1, dj+1, a, c]`` of the bilinear form."""
        S = np.zeros((self.nn, self.nn, 3, 3, 2, 2))
        for lo in range(0, self.ne, chunk):
            hi = min(self.ne, lo + chunk)
            Ke = self.element_matrices(L[lo:hi])
            for A, (ai, aj) in enumerate(CORNERS):
                for C, (ci, cj) in enumerate(CORNERS):
                    blk = Ke[:, :, A, :, C, :]
                    di, dj = ci - ai + 1, cj - aj + 1
                    rows = np.arange(lo, hi) + ai
                    if self.periodic:
                        rows %= self.nn
                        cols = (np.arange(self.ne) + aj) % self.nn
                        S[rows[:, None], cols[None, :], di, dj] += blk
                    else:
                        S[lo + ai:hi + ai, aj:aj + self.ne, di, dj] += blk
        return S

    def assemble(self, L, free=None):
        """CSR matrix over dofs ``2 * node + comp`` (node = i * nn + j),
        restricted to the nodes flagged in ``free`` when given."""
        S = self.stencil(L)
        nn = self.nn
        ii, jj = np.meshgrid(np.arange(nn), np.arange(nn), indexing="ij")
        if free is None:
            fmask = np.ones((nn, nn), dtype=bool)
        else:
            fmask = np.asarray(free, dtype=bool)
        number = -np.ones((nn, nn), dtype=np.int64)
        number[fmask] = np.arange(int(fmask.sum()))
        rows, cols, vals = [], [], []
        for di in range(3):
            for dj in range(3):
                ti, tj = ii + di - 1, jj + dj - 1
                if self.periodic:
                    ti %= nn
                    tj %= nn
                    ok = fmask.copy()
                else:
                    ok = fmask & (ti >= 0) & (ti < nn) & (tj >= 0) & (tj < nn)
                ok[ok] &= fmask[ti[ok], tj[ok]]
                rn = number[ok]
                cn = number[ti[ok], tj[ok]]
                blk = S[ok, di, dj]
                for a in range(2):
                    for c in range(2):
                        rows.append(2 * rn + a)
                        cols.append(2 * cn + c)
                        vals.append(blk[:, a, c])
        n = 2 * int(fmask.sum())
        K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
        K.sum_duplicates()
        return K


class PeriodicGrid(StructuredQ1):
    """The periodic cell ``kY = [0, k)^2`` with ``n`` cells per unit length."""

    def __init__(self, n, k=1):
        if n < 4:
            raise ValueError("need at least 4 cells per unit length")
        super().__init__(n * k, 1.0 / n, periodic=True)
        self.n = int(n)
        self.k = int(k)

    def mean(self, u):
        return u.reshape(-1, u.shape[-1]).mean(axis=0)

    def fft_preconditioner(self, L0):
        """Exact inverse of the constant-coefficient operator with tensor ``L0``
        (zero Fourier mode mapped to zero), applied via 2D FFTs."""
        # interior-node stencil of a constant-coefficient grid
        big = StructuredQ1(3, self.h, periodic=False)
        st = big.stencil(np.broadcast_to(L0, (3, 3, 4, 2, 2, 2, 2)))[1, 1]
        kx = 2 * np.pi * np.fft.fftfreq(self.nn)
        ky = 2 * np.pi * np.fft.fftfreq(self.nn)
        symbol = np.zeros((self.nn, self.nn, 2, 2), dtype=complex)
        for di in range(3):
            for dj in range(3):
                ph = np.exp(1j * ((di - 1) * kx[:, None] + (dj - 1) * ky[None, :]))
                symbol += ph[:, :, None, None] * st[di, dj][None, None]
        symbol[0, 0] = np.eye(2)
        inv = np.linalg.inv(symbol)
        inv[0, 0] = 0.0

        def apply(r):
            rh = np.fft.fft2(r, axes=(0, 1))
            zh = np.einsum("ijac,ijc->ija", inv, rh)
            return np.real(np.fft.ifft2(zh, axes=(0, 1)))

        return apply


class DirichletGrid(StructuredQ1):
    """Unit square with ``m`` cells per axis; boundary nodes are constrained."""

    def __init__(self, m):
        if m < 2:
            raise ValueError("need at least 2 cells per axis")
        super().__init__(m, 1.0 / m, periodic=False)
        self.m = int(m)
        free = np.zeros((self.nn, self.nn), dtype=bool)
        free[1:-1, 1:-1] = True
        self.free = free

    def laplace_preconditioner(self, scale=1.0):
        """Exact inverse of ``scale`` times the scalar Q1 Laplacian (per component)
        on interior nodes, via type-I discrete sine transforms."""
        m, h = self.m, self.h
        th = np.pi * np.arange(1, m) / m
        k1 = (2 - 2 * np.cos(th)) / h
        m1 = h * (4 + 2 * np.cos(th)) / 6
        lam = scale * (k1[:, None] * m1[None, :] + m1[:, None] * k1[None, :])

        def apply(r):
            out = np.zeros_like(r)
            rh = sfft.dstn(r[1:-1, 1:-1], type=1, axes=(0, 1), norm="ortho")
            out[1:-1, 1:-1] = sfft.idstn(rh / lam[..., None], type=1, axes=(0, 1), norm="ortho")
            return out

        return apply
