"""Closed-form static potentials of a flat triangle.

For an observation point ``r`` and a triangle ``T`` these return

    I0 = int_T 1/R dS',   I1 = int_T (r' - r)/R dS',   Ig = int_T grad_r(1/R) dS'

with ``R = |r - r'|``.  ``Ig`` is the principal value limit when ``r`` lies
in the plane of ``T`` (the normal component vanishes).  The formulas are the
classical line-integral reductions over the triangle edges.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _edge_log(lp, lm, r0):
    """int_{lm}^{lp} dl / sqrt(l^2 + r0^2), stable for any signs."""
    if r0 > 1e-14 * (abs(lp) + abs(lm)):
        return math.asinh(lp / r0) - math.asinh(lm / r0)
    if lm > 0.0:
        return math.log(lp / lm)
    if lp < 0.0:
        return math.log(lm / lp)
    return 0.0  # on the edge segment itself; callers avoid this case


@njit(cache=True, nogil=True)
def static_potentials(r, P):
    """Static triangle integrals at point ``r`` (3,) for vertices ``P`` (3, 3).

    Returns
    -------
    I0 : float
    I1 : ndarray (3,)
    Ig : ndarray (3,)
    """
    e1 = P[1] - P[0]
    e2 = P[2] - P[0]
    n = np.cross(e1, e2)
    twoA = math.sqrt(n[0] ** 2 + n[1] ** 2 + n[2] ** 2)
    n = n / twoA
    scale = math.sqrt(twoA)
    d = (r[0] - P[0, 0]) * n[0] + (r[1] - P[0, 1]) * n[1] + (r[2] - P[0, 2]) * n[2]
    if abs(d) < 1e-12 * scale:
        d = 0.0
    rho = r - d * n
    ad = abs(d)
    I0 = 0.0
    Irho = np.zeros(3)
    Igp = np.zeros(3)
    beta_sum = 0.0
    for i in range(3):
        a = P[i]
        b = P[(i + 1) % 3]
        ed = b - a
        ell = math.sqrt(ed[0] ** 2 + ed[1] ** 2 + ed[2] ** 2)
        lt = ed / ell
        u = np.cross(lt, n)  # outward in-plane edge normal
        lp = (b[0] - rho[0]) * lt[0] + (b[1] - rho[1]) * lt[1] + (b[2] - rho[2]) * lt[2]
        lm = (a[0] - rho[0]) * lt[0] + (a[1] - rho[1]) * lt[1] + (a[2] - rho[2]) * lt[2]
        t0 = (a[0] - rho[0]) * u[0] + (a[1] - rho[1]) * u[1] + (a[2] - rho[2]) * u[2]
        r02 = t0 * t0 + d * d
        r0 = math.sqrt(r02)
        rp = math.sqrt(lp * lp + r02)
        rm = math.sqrt(lm * lm + r02)
        f = _edge_log(lp, lm, r0)
        if abs(t0) > 1e-14 * scale:
            beta = (math.atan(t0 * lp / (r02 + ad * rp)) - math.atan(t0 * lm / (r02 + ad * rm)))
        else:
            beta = 0.0
        beta_sum += beta
        I0 += t0 * f
        c = 0.5 * (r02 * f + lp * rp - lm * rm)
        Irho += c * u
        Igp -= f * u
    I0 -= ad * beta_sum
    I1 = Irho - d * I0 * n
    sg = 0.0 if d == 0.0 else (1.0 if d > 0 else -1.0)
    Ig = Igp - sg * beta_sum * n
    return I0, I1, Ig
