"""Boundary-integral blocks on the radiating surface.

With ``G = exp(-jkR) / (4 pi R)`` the operators are

    L X = -jk int [X G + k^-2 grad'.X grad G] dS',    K X = int grad G x X dS'

and, for RWG test functions ``t`` and trial functions ``s``, four Galerkin
forms are assembled:

    Lf  = <t, L s>        = -jk <<t.s G>> + (j/k) <<div t div s G>>
    Kx  = <t, n x K s>
    Lx  = <t, n x L s>    = -jk <<t.(n x s) G>> - (j/k) <<div s  t.(n x grad G)>>
    Kp  = <t, K s>

``n`` is the normal at the test point and ``K`` is taken as a principal
value.  Interactions between nearby triangles subtract the static kernel
and integrate it in closed form (see :mod:`hdgbi.singular`).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit

from .basis import tri_geometry
from .formulation import Formulation
from .hdg import gamma_face_couplings, rwg_scale
from .mesh import MeshError, Skeleton
from .quadrature import graded_triangle_rule, quad_rule
from .singular import static_potentials

FOUR_PI = 4.0 * math.pi

#: number of test triangles per assembly tile (fixed so results do not
#: depend on the worker count)
TILE = 32


@dataclass(frozen=True)
class GreensContext:
    """Free-space Green's function ``exp(-j k0 R) / (4 pi R)`` (exp(jwt) convention)."""

    k0: float

    def __post_init__(self):
        if not self.k0 > 0:
            raise ValueError("k0 must be positive")


@dataclass(frozen=True)
class QuadratureSettings:
    """Quadrature orders and the near-field threshold of the BI kernels.

    ``far``, ``far_low``, ``near_outer`` and ``near_inner`` are polynomial
    degrees.  Pairs closer than ``near_factor`` times the sum of their
    circumradii (centroid distance) use singularity subtraction; pairs beyond
    ``mid_factor`` times that sum use the cheaper ``far_low`` rule.  Pairs that share a vertex use :func:`graded_triangle_rule` with
    ``touching`` points per direction for the outer integral, since the
    static potentials are log-singular on the source triangle's edges.
    """

    far: int = 4
    near_outer: int = 6
    near_inner: int = 6
    near_factor: float = 2.0
    touching: int = 7
    far_low: int = 2
    mid_factor: float = 5.0

    def doubled(self):
        return QuadratureSettings(min(10, 2 * self.far), min(10, 2 * self.near_outer),
                                  min(10, 2 * self.near_inner), self.near_factor,
                                  2 * self.touching, min(10, 2 * self.far_low), self.mid_factor)


@njit(cache=True, nogil=True)
def _smooth_parts(k, R):
    """(G - G0) and R*(g - g0) for the gradient factor g with grad G = g (r - r')."""
    x = k * R
    if x < 1e-2:
        x2 = x * x
        gs = k * complex(-x / 2.0 + x2 * x / 24.0, -1.0 + x2 / 6.0) / FOUR_PI
        gg = k * k * complex(-0.5 + x2 / 8.0, x / 3.0 - x2 * x / 30.0) / FOUR_PI
        return gs, gg
    e = complex(math.cos(x), -math.sin(x))
    gs = (e - 1.0) / (FOUR_PI * R)
    gg = (1.0 - complex(1.0, x) * e) / (FOUR_PI * R * R)
    return gs, gg


@njit(cache=True, nogil=True)
def _inner_full(k, r, Vq, oq, bq, wq, areaq):
    """Plain Gauss inner integrals of G, G r', grad G and grad G x r'.

    ``r'`` is measured from ``oq`` (the source centroid).  Returns the ten
    complex sums as a tuple.
    """
    a0 = a1 = a2 = a3 = a4 = a5 = a6 = a7 = a8 = a9 = 0j
    for j in range(len(wq)):
        rp0 = bq[j, 0] * Vq[0, 0] + bq[j, 1] * Vq[1, 0] + bq[j, 2] * Vq[2, 0]
        rp1 = bq[j, 0] * Vq[0, 1] + bq[j, 1] * Vq[1, 1] + bq[j, 2] * Vq[2, 1]
        rp2 = bq[j, 0] * Vq[0, 2] + bq[j, 1] * Vq[1, 2] + bq[j, 2] * Vq[2, 2]
        d0 = r[0] - rp0
        d1 = r[1] - rp1
        d2 = r[2] - rp2
        rp0 -= oq[0]
        rp1 -= oq[1]
        rp2 -= oq[2]
        R = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        x = k * R
        cs = math.cos(x)
        sn = math.sin(x)
        inv = wq[j] * 2.0 * areaq / (FOUR_PI * R)
        G = complex(inv * cs, -inv * sn)
        inv3 = inv / (R * R)
        g = complex(-inv3 * (cs + x * sn), -inv3 * (x * cs - sn))
        a0 += G
        a1 += G * rp0
        a2 += G * rp1
        a3 += G * rp2
        a4 += g * d0
        a5 += g * d1
        a6 += g * d2
        # (g d) x r'
        a7 += g * (d1 * rp2 - d2 * rp1)
        a8 += g * (d2 * rp0 - d0 * rp2)
        a9 += g * (d0 * rp1 - d1 * rp0)
    return a0, a1, a2, a3, a4, a5, a6, a7, a8, a9


@njit(cache=True, nogil=True)
def _inner_near(k, r, Vq, oq, bq, wq, areaq):
    """Static part in closed form plus Gauss integration of the smooth remainder."""
    I0, I1, Ig = static_potentials(r, Vq)
    c = 1.0 / FOUR_PI
    q0 = r[0] - oq[0]
    q1 = r[1] - oq[1]
    q2 = r[2] - oq[2]
    a0 = complex(c * I0)
    a1 = complex(c * (I1[0] + q0 * I0))
    a2 = complex(c * (I1[1] + q1 * I0))
    a3 = complex(c * (I1[2] + q2 * I0))
    a4 = complex(c * Ig[0])
    a5 = complex(c * Ig[1])
    a6 = complex(c * Ig[2])
    # grad(1/R) is parallel to (r' - r), so int grad(1/R) x r' = Ig x r
    a7 = complex(c * (Ig[1] * q2 - Ig[2] * q1))
    a8 = complex(c * (Ig[2] * q0 - Ig[0] * q2))
    a9 = complex(c * (Ig[0] * q1 - Ig[1] * q0))
    for j in range(len(wq)):
        rp0 = bq[j, 0] * Vq[0, 0] + bq[j, 1] * Vq[1, 0] + bq[j, 2] * Vq[2, 0]
        rp1 = bq[j, 0] * Vq[0, 1] + bq[j, 1] * Vq[1, 1] + bq[j, 2] * Vq[2, 1]
        rp2 = bq[j, 0] * Vq[0, 2] + bq[j, 1] * Vq[1, 2] + bq[j, 2] * Vq[2, 2]
        d0 = r[0] - rp0
        d1 = r[1] - rp1
        d2 = r[2] - rp2
        rp0 -= oq[0]
        rp1 -= oq[1]
        rp2 -= oq[2]
        R = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        w = wq[j] * 2.0 * areaq
        gs, gg = _smooth_parts(k, R)
        G = w * gs
        a0 += G
        a1 += G * rp0
        a2 += G * rp1
        a3 += G * rp2
        if R > 0.0:
            g = w * gg / R
            a4 += g * d0
            a5 += g * d1
            a6 += g * d2
            a7 += g * (d1 * rp2 - d2 * rp1)
            a8 += g * (d2 * rp0 - d0 * rp2)
            a9 += g * (d0 * rp1 - d1 * rp0)
    return a0, a1, a2, a3, a4, a5, a6, a7, a8, a9


@njit(cache=True, nogil=True, inline="always")
def _dot(a0, a1, a2, b0, b1, b2):
    return a0 * b0 + a1 * b1 + a2 * b2


@njit(cache=True, nogil=True)
def _pair_forms(k, Vp, npv, areap, op, Vq, oq, areaq, near, bo, wo, bi, wi, r, forms):
    """Local 3x3 forms between unscaled pieces (r - v_a) on p and (r' - v_b) on q.

    ``forms`` (4, 3, 3) complex receives Lf, Kx, Lx, Kp and ``r`` (3,) is
    scratch.  Outer points are reduced to a few
    moments (coordinates relative to ``op``; source quantities relative to
    ``oq``) and the 3x3 blocks are expanded once at the end.
    """
    n0, n1, n2 = npv[0], npv[1], npv[2]
    # scalar moments (sums over outer points, W included):
    # A0 = SG, A1 = SG x, A2 = s, A3 = x.s, B0 = x.kv, B1 = x cross Tg,
    # B2 = kv, B3 = Tg, C0 = x.(n x s), D0 = x.(n x kv), D1 = x.Tg,
    # D2 = (n.Tg) x, E0 = x.(n x Tg)
    A0 = A3 = B0 = C0 = D0 = D1 = E0 = 0j
    A1x = A1y = A1z = A2x = A2y = A2z = 0j
    B1x = B1y = B1z = B2x = B2y = B2z = B3x = B3y = B3z = 0j
    D2x = D2y = D2z = 0j
    for i in range(len(wo)):
        for c in range(3):
            r[c] = bo[i, 0] * Vp[0, c] + bo[i, 1] * Vp[1, c] + bo[i, 2] * Vp[2, c]
        if near:
            u = _inner_near(k, r, Vq, oq, bi, wi, areaq)
        else:
            u = _inner_full(k, r, Vq, oq, bi, wi, areaq)
        W = wo[i] * 2.0 * areap
        x0, x1, x2 = r[0] - op[0], r[1] - op[1], r[2] - op[2]
        SG = W * u[0]
        s0, s1, s2 = W * u[1], W * u[2], W * u[3]
        t0, t1, t2 = W * u[4], W * u[5], W * u[6]
        k0_, k1_, k2_ = W * u[7], W * u[8], W * u[9]
        A0 += SG
        A1x += SG * x0
        A1y += SG * x1
        A1z += SG * x2
        A2x += s0
        A2y += s1
        A2z += s2
        A3 += _dot(x0, x1, x2, s0, s1, s2)
        B0 += _dot(x0, x1, x2, k0_, k1_, k2_)
        B1x += x1 * t2 - x2 * t1
        B1y += x2 * t0 - x0 * t2
        B1z += x0 * t1 - x1 * t0
        B2x += k0_
        B2y += k1_
        B2z += k2_
        B3x += t0
        B3y += t1
        B3z += t2
        C0 += _dot(x0, x1, x2, n1 * s2 - n2 * s1, n2 * s0 - n0 * s2, n0 * s1 - n1 * s0)
        D0 += _dot(x0, x1, x2, n1 * k2_ - n2 * k1_, n2 * k0_ - n0 * k2_, n0 * k1_ - n1 * k0_)
        D1 += _dot(x0, x1, x2, t0, t1, t2)
        nt = _dot(n0, n1, n2, t0, t1, t2)
        D2x += nt * x0
        D2y += nt * x1
        D2z += nt * x2
        E0 += _dot(x0, x1, x2, n1 * t2 - n2 * t1, n2 * t0 - n0 * t2, n0 * t1 - n1 * t0)
    # n x (sum s), n x (sum kv), n x (sum Tg) and n . (sum Tg)
    nA2x, nA2y, nA2z = n1 * A2z - n2 * A2y, n2 * A2x - n0 * A2z, n0 * A2y - n1 * A2x
    nB2x, nB2y, nB2z = n1 * B2z - n2 * B2y, n2 * B2x - n0 * B2z, n0 * B2y - n1 * B2x
    nB3x, nB3y, nB3z = n1 * B3z - n2 * B3y, n2 * B3x - n0 * B3z, n0 * B3y - n1 * B3x
    nTB3 = _dot(n0, n1, n2, B3x, B3y, B3z)
    jk = 1j * k
    jok = 1j / k
    for a in range(3):
        a0, a1, a2 = Vp[a, 0] - op[0], Vp[a, 1] - op[1], Vp[a, 2] - op[2]
        F6 = E0 - _dot(a0, a1, a2, nB3x, nB3y, nB3z)
        va_A2 = _dot(a0, a1, a2, A2x, A2y, A2z)
        va_B2 = _dot(a0, a1, a2, B2x, B2y, B2z)
        va_nA2 = _dot(a0, a1, a2, nA2x, nA2y, nA2z)
        va_nB2 = _dot(a0, a1, a2, nB2x, nB2y, nB2z)
        va_B3 = _dot(a0, a1, a2, B3x, B3y, B3z)
        for b in range(3):
            b0, b1, b2 = Vq[b, 0] - oq[0], Vq[b, 1] - oq[1], Vq[b, 2] - oq[2]
            nb0, nb1, nb2 = n1 * b2 - n2 * b1, n2 * b0 - n0 * b2, n0 * b1 - n1 * b0
            ab = _dot(a0, a1, a2, b0, b1, b2)
            F1 = A3 - _dot(b0, b1, b2, A1x, A1y, A1z) - va_A2 + A0 * ab
            F5 = (C0 - _dot(nb0, nb1, nb2, A1x, A1y, A1z) - va_nA2
                  + A0 * _dot(a0, a1, a2, nb0, nb1, nb2))
            # a . (B3 x b)
            aB3b = _dot(a0, a1, a2, B3y * b2 - B3z * b1, B3z * b0 - B3x * b2, B3x * b1 - B3y * b0)
            F4 = B0 - _dot(b0, b1, b2, B1x, B1y, B1z) - va_B2 + aB3b
            nb = _dot(n0, n1, n2, b0, b1, b2)
            F3 = (D0 - (D1 * nb - _dot(b0, b1, b2, D2x, D2y, D2z)) - va_nB2
                  + va_B3 * nb - ab * nTB3)
            forms[0, a, b] = -jk * F1 + jok * 4.0 * A0
            forms[1, a, b] = F3
            forms[2, a, b] = -jk * F5 - jok * 2.0 * F6
            forms[3, a, b] = F4


@njit(cache=True, nogil=True)
def _tile_kernel(tests, V, N, A, fv, cent, rad, k, near_factor, mid_factor,
                 bf, wf, bl, wl, bo, wo, bt, wt, bi, wi, rwg_idx, rwg_coef, out):
    """Forms of the test triangles ``tests`` against all RWG trial functions.

    ``out`` has shape (len(tests), n_rwg, 4, 3): the trial side is already
    contracted with its RWG coefficients.
    """
    nf = V.shape[0]
    forms = np.zeros((4, 3, 3), dtype=np.complex128)
    r = np.zeros(3)
    for ip in range(len(tests)):
        p = tests[ip]
        for q in range(nf):
            dx = cent[p, 0] - cent[q, 0]
            dy = cent[p, 1] - cent[q, 1]
            dz = cent[p, 2] - cent[q, 2]
            dist = math.sqrt(dx * dx + dy * dy + dz * dz)
            near = dist < near_factor * (rad[p] + rad[q])
            touch = False
            if near:
                for a in range(3):
                    for b in range(3):
                        if fv[p, a] == fv[q, b]:
                            touch = True
            if touch:
                _pair_forms(k, V[p], N[p], A[p], cent[p], V[q], cent[q], A[q], True, bt, wt, bi, wi, r, forms)
            elif near:
                _pair_forms(k, V[p], N[p], A[p], cent[p], V[q], cent[q], A[q], True, bo, wo, bi, wi, r, forms)
            elif dist > mid_factor * (rad[p] + rad[q]):
                _pair_forms(k, V[p], N[p], A[p], cent[p], V[q], cent[q], A[q], False, bl, wl, bl, wl, r, forms)
            else:
                _pair_forms(k, V[p], N[p], A[p], cent[p], V[q], cent[q], A[q], False, bf, wf, bf, wf, r, forms)
            for b in range(3):
                n = rwg_idx[q, b]
                if n < 0:
                    continue
                cb = rwg_coef[q, b]
                for f in range(4):
                    for a in range(3):
                        out[ip, n, f, a] += cb * forms[f, a, b]


class BiAssemblyError(RuntimeError):
    """Raised for open surfaces or non-finite interaction entries."""


def _surface_arrays(skeleton: Skeleton):
    V = np.ascontiguousarray(skeleton.gamma_vertices())
    N = np.ascontiguousarray(skeleton.gamma_normals())
    area, _, _ = tri_geometry(V)
    cent = V.mean(axis=1)
    rad = np.linalg.norm(V - cent[:, None, :], axis=2).max(axis=1)
    return V, N, area, cent, rad


def _face_vertex_ids(skeleton: Skeleton):
    return np.ascontiguousarray(skeleton.faces[skeleton.gamma_faces], dtype=np.int64)


def assemble_forms(skeleton: Skeleton, k0: float, quad: QuadratureSettings = QuadratureSettings(),
                   workers: int = 1, test_faces=None):
    """Dense RWG matrices of the four forms ``(Lf, Kx, Lx, Kp)``.

    Returns an array of shape (4, n_rwg, n_rwg).  Tiles of :data:`TILE` test
    triangles are computed by ``workers`` threads and merged in tile order,
    so the result is bit-identical for any worker count.  ``Lf`` and ``Kp``
    are exactly symmetric bilinear forms; the full assembly stores the mean
    of each and its transpose (the test and source rules differ, so the raw
    quadrature is symmetric only to its own accuracy).  Rows restricted by
    ``test_faces`` are returned unsymmetrised.
    """
    V, N, area, cent, rad = _surface_arrays(skeleton)
    nr = skeleton.n_rwg
    ng = len(V)
    rf = quad_rule("triangle", quad.far)
    rl = quad_rule("triangle", quad.far_low)
    ro = quad_rule("triangle", quad.near_outer)
    rt = graded_triangle_rule(quad.touching)
    fv = _face_vertex_ids(skeleton)
    ri = quad_rule("triangle", quad.near_inner)
    coef = rwg_scale(skeleton)
    idx = skeleton.gamma_rwg
    out = np.zeros((4, nr, nr), dtype=complex)
    faces = np.arange(ng) if test_faces is None else np.asarray(test_faces, dtype=np.int64)
    starts = range(0, len(faces), TILE)

    def work(s):
        sel = np.ascontiguousarray(faces[s:s + TILE])
        buf = np.zeros((len(sel), nr, 4, 3), dtype=complex)
        _tile_kernel(sel, V, N, area, fv, cent, rad, float(k0), float(quad.near_factor),
                     float(quad.mid_factor), rf.points, rf.weights, rl.points, rl.weights, ro.points, ro.weights, rt.points, rt.weights,
                     ri.points, ri.weights,
                     idx, coef, buf)
        return sel, buf

    def merge(res):
        sel, buf = res
        for ip, p in enumerate(sel):
            for a in range(3):
                m = idx[p, a]
                if m >= 0:
                    out[:, m, :] += coef[p, a] * buf[ip, :, :, a].T

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            for res in ex.map(work, starts):
                merge(res)
    else:
        for s in starts:
            merge(work(s))
    if test_faces is None:
        for f in (0, 3):
            _symmetrize(out[f])
    return out


def _symmetrize(A, block=256):
    """``A <- (A + A^T) / 2`` in place, by square tiles."""
    n = A.shape[0]
    for i in range(0, n, block):
        for j in range(i, n, block):
            a = A[i:i + block, j:j + block]
            b = A[j:j + block, i:i + block]
            if i == j:
                a[...] = 0.5 * (a + a.T)
            else:
                m = 0.5 * (a + b.T)
                a[...] = m
                b[...] = m.T


def surface_grams(skeleton: Skeleton):
    """Sparse ``<j_m, j_n>`` and ``<j_m, n x j_n>`` on the radiating surface."""
    V, N, area, _, _ = _surface_arrays(skeleton)
    rule = quad_rule("triangle", 2)
    r = np.einsum("qa,gai->gqi", rule.points, V)
    t = r[:, :, None, :] - V[:, None, :, :]  # (ng, Q, 3, 3)
    nt_ = np.cross(N[:, None, None, :], t)
    w = 2.0 * rule.weights[None, :] * area[:, None]
    G = np.einsum("gq,gqai,gqbi->gab", w, t, t)
    Gx = np.einsum("gq,gqai,gqbi->gab", w, t, nt_)
    c = rwg_scale(skeleton)
    idx = skeleton.gamma_rwg
    nr = skeleton.n_rwg
    rows = np.broadcast_to(idx[:, :, None], G.shape)
    cols = np.broadcast_to(idx[:, None, :], G.shape)
    cc = c[:, :, None] * c[:, None, :]
    keep = (rows >= 0) & (cols >= 0)
    mk = lambda M: sp.coo_matrix(((cc * M)[keep], (rows[keep], cols[keep])), shape=(nr, nr)).tocsr()
    return mk(G), mk(Gx)


@dataclass
class BiSystem:
    """Dense current blocks, their couplings to the hybrid unknown and the RHS.

    ``C`` holds ``[[C_JJ, C_JM], [C_MJ, C_MM]]`` as one (2 n_rwg)^2 array;
    the four blocks are views.  ``D_JL`` and ``D_ML`` are (n_rwg, n_hdg).
    """

    C: np.ndarray
    D_JL: sp.csr_matrix
    D_ML: sp.csr_matrix
    form: Formulation
    n_rwg: int

    def block(self, name):
        n = self.n_rwg
        i, j = {"JJ": (0, 0), "JM": (0, 1), "MJ": (1, 0), "MM": (1, 1)}[name]
        return self.C[i * n:(i + 1) * n, j * n:(j + 1) * n]

    @property
    def D_XL(self):
        return sp.vstack([self.D_JL, self.D_ML], format="csr")


def combine_blocks(forms, gram, gram_x, form: Formulation, out=None, rows_per_chunk=512):
    """Compose the dense system matrix from the four kernel forms.

    With ``X = -(a Lf + (1-a) Kx)`` and ``Y = (1-a) Lx - a Kp``::

        C = [[id_jj G + X,  id_jm Gx - Y],
             [id_mj Gx + Y, id_mm G + X ]]

    Rows are processed in chunks so the temporaries stay small.
    """
    Lf, Kx, Lx, Kp = forms
    a = form.alpha
    n = Lf.shape[0]
    C = np.empty((2 * n, 2 * n), dtype=complex) if out is None else out
    for s in range(0, n, rows_per_chunk):
        e = min(n, s + rows_per_chunk)
        X = -(a * Lf[s:e] + (1 - a) * Kx[s:e])
        Y = (1 - a) * Lx[s:e] - a * Kp[s:e]
        C[s:e, :n] = X
        C[n + s:n + e, n:] = X
        C[s:e, n:] = -Y
        C[n + s:n + e, :n] = Y
    for M, (ij, w) in ((gram, ((0, 0), form.id_jj)), (gram, ((1, 1), form.id_mm)),
                       (gram_x, ((0, 1), form.id_jm)), (gram_x, ((1, 0), form.id_mj))):
        M = sp.coo_matrix(M)
        C[ij[0] * n + M.row, ij[1] * n + M.col] += w * M.data
    return C


def current_lambda_couplings(skeleton: Skeleton, form: Formulation = Formulation()):
    """``D_JL = -beta <j, n x eta>`` and ``D_ML = gamma <m, eta>`` (n_rwg x n_hdg)."""
    n = 3 * skeleton.n_face
    nr = skeleton.n_rwg
    P, Px = gamma_face_couplings(skeleton)  # P[g,i,b] = <eta_i, t_b>, Px = <eta_i, n x t_b>
    c = rwg_scale(skeleton)
    dofs = skeleton.face_dofs(skeleton.gamma_faces)
    rwg = skeleton.gamma_rwg
    rows = np.broadcast_to(rwg[:, None, :], P.shape)
    cols = np.broadcast_to(dofs[:, :, None], P.shape)
    keep = rows >= 0
    # <t_b, n x eta_i> = -<n x t_b, eta_i>
    vj = (-form.beta * (-Px) * c[:, None, :])[keep]
    vm = (form.gamma * P * c[:, None, :])[keep]
    D_JL = sp.coo_matrix((vj, (rows[keep], cols[keep])), shape=(nr, n)).tocsr()
    D_ML = sp.coo_matrix((vm, (rows[keep], cols[keep])), shape=(nr, n)).tocsr()
    return D_JL, D_ML


def assemble_bi(skeleton: Skeleton, green: GreensContext, form: Formulation = Formulation(),
                quad: QuadratureSettings = QuadratureSettings(), workers: int = 1) -> BiSystem:
    """Assemble the dense BI blocks and the current-to-hybrid couplings.

    Raises
    ------
    BiAssemblyError
        If the radiating surface is open or an entry is not finite.
    """
    if not skeleton.closed or skeleton.n_rwg == 0:
        raise BiAssemblyError("radiating surface is open; the boundary integral needs a closed surface")
    forms = assemble_forms(skeleton, green.k0, quad, workers)
    G, Gx = surface_grams(skeleton)
    C = combine_blocks(forms, G, Gx, form)
    del forms
    if not np.isfinite(C).all():
        m, n = np.argwhere(~np.isfinite(C))[0]
        raise BiAssemblyError(f"non-finite BI entry at ({m}, {n})")
    D_JL, D_ML = current_lambda_couplings(skeleton, form)
    return BiSystem(C, D_JL, D_ML, form, skeleton.n_rwg)


def assemble_rhs(skeleton: Skeleton, wave, form: Formulation = Formulation(), degree=4):
    """Right-hand sides ``(b_J, b_M)`` for a plane wave.

    ``b_J = <j, a E + (1-a) n x H>`` and ``b_M = <m, a H - (1-a) n x E>``
    with the normalised incident fields.
    """
    from .physics import incident_fields

    V, N, area, _, _ = _surface_arrays(skeleton)
    rule = quad_rule("triangle", degree)
    r = np.einsum("qa,gai->gqi", rule.points, V)
    E, H = incident_fields(wave, r.reshape(-1, 3))
    E = E.reshape(r.shape)
    H = H.reshape(r.shape)
    Nq = np.broadcast_to(N[:, None, :], r.shape)
    a = form.alpha
    fJ = a * E + (1 - a) * np.cross(Nq, H)
    fM = a * H - (1 - a) * np.cross(Nq, E)
    t = r[:, :, None, :] - V[:, None, :, :]
    w = 2.0 * rule.weights[None, :] * area[:, None]
    c = rwg_scale(skeleton)
    loc_J = np.einsum("gq,gqbi,gqi->gb", w, t, fJ) * c
    loc_M = np.einsum("gq,gqbi,gqi->gb", w, t, fM) * c
    nr = skeleton.n_rwg
    idx = skeleton.gamma_rwg
    keep = idx >= 0
    bJ = np.zeros(nr, dtype=complex)
    bM = np.zeros(nr, dtype=complex)
    np.add.at(bJ, idx[keep], loc_J[keep])
    np.add.at(bM, idx[keep], loc_M[keep])
    return bJ, bM


def dump_hbic(path, matrix):
    """Write a dense complex matrix as ``HBIC`` + u32 rows + u32 cols + data."""
    M = np.ascontiguousarray(matrix, dtype="<c16")
    if M.ndim != 2:
        raise ValueError("dense dump needs a 2-D matrix")
    with open(path, "wb") as fh:
        fh.write(b"HBIC")
        fh.write(np.array(M.shape, dtype="<u4").tobytes())
        fh.write(M.tobytes(order="C"))


def load_hbic(path):
    """Read a matrix written by :func:`dump_hbic`."""
    with open(path, "rb") as fh:
        if fh.read(4) != b"HBIC":
            raise ValueError("not an HBIC file")
        rows, cols = np.frombuffer(fh.read(8), dtype="<u4")
        data = np.frombuffer(fh.read(), dtype="<c16")
    return data.reshape(int(rows), int(cols)).copy()


def l_entry(skeleton: Skeleton, k0, m, n, quad: QuadratureSettings = QuadratureSettings()):
    """Single Galerkin entry ``<j_m, L j_n>``."""
    return _entry(skeleton, k0, m, n, 0, quad)


def k_entry(skeleton: Skeleton, k0, m, n, twisted=True, quad: QuadratureSettings = QuadratureSettings()):
    """Single entry ``<j_m, n x K j_n>`` (``twisted``) or ``<j_m, K j_n>``."""
    return _entry(skeleton, k0, m, n, 1 if twisted else 3, quad)


def _entry(skeleton, k0, m, n, which, quad):
    faces = np.unique(np.concatenate([skeleton.rwg_faces[m], skeleton.rwg_faces[n]]))
    forms = assemble_forms(skeleton, k0, quad, test_faces=faces)
    if which in (0, 3):  # symmetric forms, as in the full assembly
        return 0.5 * (forms[which, m, n] + forms[which, n, m])
    return forms[which, m, n]


__all__ = ["GreensContext", "QuadratureSettings", "BiSystem", "BiAssemblyError", "assemble_bi",
           "assemble_forms", "assemble_rhs", "surface_grams", "combine_blocks",
           "current_lambda_couplings", "dump_hbic", "load_hbic", "l_entry", "k_entry", "MeshError"]
