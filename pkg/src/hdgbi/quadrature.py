"""Quadrature rules on the reference triangle and tetrahedron.

Points are returned in barycentric coordinates and weights sum to the
measure of the reference simplex (1/2 for the triangle, 1/6 for the
tetrahedron).  Low degrees use classical symmetric rules with positive
weights; everything else falls back to a collapsed Gauss-Jacobi product.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 10


@dataclass(frozen=True)
class QuadratureRule:
    """A quadrature rule on a reference simplex.

    Attributes
    ----------
    domain : str
        ``"triangle"`` or ``"tetrahedron"``.
    degree : int
        Polynomial degree integrated exactly.
    points : ndarray, shape (P, 3) or (P, 4)
        Barycentric coordinates of the nodes.
    weights : ndarray, shape (P,)
        Weights summing to the reference measure.
    """

    domain: str
    degree: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.weights)

    def physical(self, vertices):
        """Map the nodes onto a simplex given by ``vertices`` (nv, 3)."""
        return self.points @ np.asarray(vertices)


def _orbit3(a):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


# symmetric triangle rules, weights normalised to 1
_TRI_TABLE = {
    1: [((1 / 3, 1 / 3, 1 / 3), 1.0)],
    2: [(p, 1 / 3) for p in _orbit3(1 / 6)],
    4: [(p, 0.223381589678011) for p in _orbit3(0.445948490915965)]
    + [(p, 0.109951743655322) for p in _orbit3(0.091576213509771)],
    5: [((1 / 3, 1 / 3, 1 / 3), 0.225)]
    + [(p, 0.132394152788506) for p in _orbit3(0.470142064105115)]
    + [(p, 0.125939180544827) for p in _orbit3(0.101286507323456)],
    6: [(p, 0.116786275726379) for p in _orbit3(0.249286745170910)]
    + [(p, 0.050844906370207) for p in _orbit3(0.063089014491502)]
    + [(p, 0.082851075618374) for p in _orbit6(0.053145049844817, 0.310352451033784)],
}


def _collapsed_triangle(degree):
    n = (degree + 2) // 2
    xs, ws = roots_legendre(n)
    xt, wt = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (xs + 1.0)
    t = 0.5 * (xt + 1.0)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(0.5 * ws, 0.25 * wt)
    x = S * (1.0 - T)
    y = T
    pts = np.stack([1.0 - x - y, x, y], axis=-1).reshape(-1, 3)
    return pts, W.ravel()


def _collapsed_tet(degree):
    n = (degree + 2) // 2
    xs, ws = roots_legendre(n)
    xt, wt = roots_jacobi(n, 1.0, 0.0)
    xu, wu = roots_jacobi(n, 2.0, 0.0)
    s = 0.5 * (xs + 1.0)
    t = 0.5 * (xt + 1.0)
    u = 0.5 * (xu + 1.0)
    S, T, U = np.meshgrid(s, t, u, indexing="ij")
    W = np.einsum("i,j,k->ijk", 0.5 * ws, 0.25 * wt, 0.125 * wu)
    z = U
    y = T * (1.0 - U)
    x = S * (1.0 - T) * (1.0 - U)
    pts = np.stack([1.0 - x - y - z, x, y, z], axis=-1).reshape(-1, 4)
    return pts, W.ravel()


@lru_cache(maxsize=None)
def _rule(domain, degree):
    if domain == "triangle":
        key = 4 if degree == 3 else degree
        if key in _TRI_TABLE:
            pts = np.array([p for p, _ in _TRI_TABLE[key]], dtype=float)
            w = 0.5 * np.array([w for _, w in _TRI_TABLE[key]], dtype=float)
        else:
            pts, w = _collapsed_triangle(degree)
    elif domain == "tetrahedron":
        if degree == 1:
            pts = np.full((1, 4), 0.25)
            w = np.array([1.0 / 6.0])
        elif degree == 2:
            a, b = 0.5854101966249685, 0.1381966011250105
            pts = np.array([[a, b, b, b], [b, a, b, b], [b, b, a, b], [b, b, b, a]])
            w = np.full(4, 1.0 / 24.0)
        else:
            pts, w = _collapsed_tet(degree)
    else:
        raise ValueError(f"unknown domain {domain!r}")
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(domain, degree, pts, w)


def quad_rule(domain: str, degree: int) -> QuadratureRule:
    """Return a positive-weight rule exact for polynomials up to ``degree``.

    Parameters
    ----------
    domain : {"triangle", "tetrahedron"}
    degree : int
        Requested degree of exactness, 1 to 10.

    Raises
    ------
    ValueError
        If the degree is outside the supported range or the domain is unknown.
    """
    if not isinstance(degree, (int, np.integer)) or degree < 1 or degree > MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree!r} (1..{MAX_DEGREE})")
    return _rule(domain, int(degree))


@lru_cache(maxsize=None)
def graded_triangle_rule(n: int, s_power: int = 2, t_power: int = 3) -> QuadratureRule:
    """Outer rule for integrands with log singularities on the triangle boundary.

    The triangle is split into six pieces (vertex, edge midpoint, centroid).
    Each piece is collapsed onto its vertex and graded towards its edge with
    the substitutions ``s = x**s_power`` and ``t = y**t_power`` on an
    ``n x n`` Gauss-Legendre product.  ``degree`` is reported as ``-1``
    because the rule is not designed for polynomial exactness.
    """
    if n < 1:
        raise ValueError("graded rule needs at least one point per direction")
    x, w = roots_legendre(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    s, ws = x**s_power, w * s_power * x ** (s_power - 1)
    t, wt = x**t_power, w * t_power * x ** (t_power - 1)
    S, T = (a.ravel() for a in np.meshgrid(s, t, indexing="ij"))
    WST = (np.outer(ws, wt)).ravel() * S / 6.0  # piece area 1/12, Jacobian 2 * area * s
    E = np.eye(3)
    c = np.full(3, 1.0 / 3.0)
    pts, wts = [], []
    for a in range(3):
        for b in range(3):
            if a == b:
                continue
            A, M = E[a], 0.5 * (E[a] + E[b])
            pts.append(A + S[:, None] * ((M - A) + T[:, None] * (c - M)))
            wts.append(WST)
    return QuadratureRule("triangle", -1, np.concatenate(pts), np.concatenate(wts))
