"""Lowest-order edge elements.

Three families are needed:

* Whitney 1-forms on tetrahedra (six edge functions per element) for the
  element-local electric and magnetic fields,
* Whitney 1-forms on triangles (three per face) for the hybrid unknown,
* Rao-Wilton-Glisson functions on pairs of triangles for the surface currents.

All functions are evaluated from physical vertex coordinates.  Barycentric
points are passed as arrays of shape ``(P, nv)``.
"""

from __future__ import annotations

import numpy as np

#: local vertex pairs of the six tetrahedral edges
TET_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
#: local vertex pairs of the three triangle edges
TRI_EDGES = np.array([(0, 1), (0, 2), (1, 2)])
#: local face k of a tetrahedron is opposite vertex k
TET_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])


def tet_gradients(vertices):
    """Barycentric gradients and volume of one or many tetrahedra.

    Parameters
    ----------
    vertices : array_like, shape (..., 4, 3)

    Returns
    -------
    grads : ndarray, shape (..., 4, 3)
    volume : ndarray, shape (...)
        Signed volume; positive for right-handed vertex order.
    """
    X = np.asarray(vertices, dtype=float)
    J = np.stack([X[..., 1, :] - X[..., 0, :], X[..., 2, :] - X[..., 0, :],
                  X[..., 3, :] - X[..., 0, :]], axis=-1)
    det = np.linalg.det(J)
    Jinv = np.linalg.inv(J)  # rows are the gradients of lambda_1..3
    g = np.empty(X.shape[:-2] + (4, 3))
    g[..., 1:, :] = Jinv
    g[..., 0, :] = -Jinv.sum(axis=-2)
    return g, det / 6.0


def edge_signs(global_ids, edges=TET_EDGES):
    """+1 where the local edge runs from lower to higher global index."""
    gid = np.asarray(global_ids)
    return np.where(gid[..., edges[:, 0]] < gid[..., edges[:, 1]], 1.0, -1.0)


def eval_edge3d(vertices, bary, signs=None):
    """Whitney edge functions on a tetrahedron.

    Parameters
    ----------
    vertices : array_like, shape (4, 3)
    bary : array_like, shape (P, 4)
        Evaluation points in barycentric coordinates.
    signs : array_like, shape (6,), optional
        Global orientation of each local edge (default all +1).

    Returns
    -------
    values : ndarray, shape (P, 6, 3)
    curls : ndarray, shape (6, 3)
        The curls are constant, ``2 grad(l_a) x grad(l_b)``.
    """
    g, _ = tet_gradients(vertices)
    lam = np.atleast_2d(np.asarray(bary, dtype=float))
    a, b = TET_EDGES[:, 0], TET_EDGES[:, 1]
    s = np.ones(6) if signs is None else np.asarray(signs, dtype=float)
    vals = lam[:, a, None] * g[None, b, :] - lam[:, b, None] * g[None, a, :]
    curls = 2.0 * np.cross(g[a], g[b])
    return vals * s[None, :, None], curls * s[:, None]


def tri_geometry(vertices):
    """Area, unit normal and in-plane barycentric gradients of triangles.

    The normal follows the right-hand rule of the vertex order.

    Parameters
    ----------
    vertices : array_like, shape (..., 3, 3)

    Returns
    -------
    area : ndarray (...)
    normal : ndarray (..., 3)
    grads : ndarray (..., 3, 3)
    """
    X = np.asarray(vertices, dtype=float)
    e1 = X[..., 1, :] - X[..., 0, :]
    e2 = X[..., 2, :] - X[..., 0, :]
    c = np.cross(e1, e2)
    twoA = np.linalg.norm(c, axis=-1)
    n = c / twoA[..., None]
    # grad(mu_i) = n x (opposite edge) / 2A, edge taken counter-clockwise
    opp = np.stack([X[..., 2, :] - X[..., 1, :], X[..., 0, :] - X[..., 2, :],
                    X[..., 1, :] - X[..., 0, :]], axis=-2)
    grads = np.cross(n[..., None, :], opp) / twoA[..., None, None]
    return 0.5 * twoA, n, grads


def eval_edge2d(vertices, bary, signs=None):
    """Whitney edge functions on a triangle (tangential, in-plane).

    Parameters
    ----------
    vertices : array_like, shape (3, 3)
    bary : array_like, shape (P, 3)
    signs : array_like, shape (3,), optional

    Returns
    -------
    values : ndarray, shape (P, 3, 3)
    """
    _, _, g = tri_geometry(vertices)
    mu = np.atleast_2d(np.asarray(bary, dtype=float))
    a, b = TRI_EDGES[:, 0], TRI_EDGES[:, 1]
    vals = mu[:, a, None] * g[None, b, :] - mu[:, b, None] * g[None, a, :]
    if signs is not None:
        vals = vals * np.asarray(signs, dtype=float)[None, :, None]
    return vals


def eval_rwg(plus, minus, edge_length, points_plus=None, points_minus=None):
    """Rao-Wilton-Glisson function on its two supporting triangles.

    Parameters
    ----------
    plus, minus : array_like, shape (3, 3)
        Triangle vertices; the free vertex (opposite the shared edge) is
        stored first.
    edge_length : float
    points_plus, points_minus : array_like, shape (P, 3), optional
        Barycentric points on each triangle.  Defaults to the centroid.

    Returns
    -------
    (val_plus, val_minus, div_plus, div_minus)
        Values of shape (P, 3) on each triangle and the constant surface
        divergences ``+l/A+`` and ``-l/A-``.
    """
    out = []
    divs = []
    for sgn, tri, pts in ((1.0, plus, points_plus), (-1.0, minus, points_minus)):
        tri = np.asarray(tri, dtype=float)
        area, _, _ = tri_geometry(tri)
        if pts is None:
            pts = np.full((1, 3), 1.0 / 3.0)
        r = np.asarray(pts, dtype=float) @ tri
        out.append(sgn * edge_length / (2.0 * area) * (r - tri[0]))
        divs.append(sgn * edge_length / area)
    return out[0], out[1], divs[0], divs[1]
