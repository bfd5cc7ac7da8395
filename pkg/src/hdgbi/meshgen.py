"""Small structured mesh generators for tests, demos and benchmarks.

These are deliberately simple: a radially extruded sphere shell built on a
Fibonacci surface triangulation, a cube-to-ball mapped Kuhn grid, and Kuhn
boxes (plates).  Surface triangles are written with physical tags so the
meshes round-trip through MSH files like externally generated ones.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.spatial import ConvexHull

from .basis import TET_FACES
from .mesh import Mesh, make_mesh

#: default physical tags used by the generators
REGION_TAG = 1
PEC_TAG = 11
RADIATING_TAG = 12


def boundary_faces(tets):
    """Faces (sorted vertex triples) that belong to exactly one tetrahedron."""
    f = np.sort(np.asarray(tets)[:, TET_FACES].reshape(-1, 3), axis=1)
    u, c = np.unique(f, axis=0, return_counts=True)
    return u[c == 1]


def _tagged(vertices, tets, tet_tags, tagger):
    bf = boundary_faces(tets)
    cent = vertices[bf].mean(axis=1)
    tags = np.array([tagger(c) for c in cent], dtype=np.int64)
    return make_mesh(vertices, tets, tet_tags, bf, tags)


def single_tet(tag=RADIATING_TAG, vertices=None) -> Mesh:
    """Reference tetrahedron with all faces tagged ``tag``."""
    V = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]) if vertices is None else vertices
    return _tagged(np.asarray(V, float), [[0, 1, 2, 3]], [REGION_TAG], lambda c: tag)


def two_tets(tagger=None, scale=1.0) -> Mesh:
    """Two tetrahedra sharing the face (0, 1, 2)."""
    V = scale * np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0.3, 0.3, 1.0], [0.35, 0.3, -0.9]])
    T = [[0, 1, 2, 3], [0, 2, 1, 4]]
    return _tagged(V, T, [REGION_TAG, REGION_TAG], tagger or (lambda c: RADIATING_TAG))


def five_tet_cube(size=1.0, tag=RADIATING_TAG) -> Mesh:
    """Unit cube split into one central and four corner tetrahedra."""
    V = size * np.array(list(itertools.product([0.0, 1.0], repeat=3)))
    # vertex index = 4x + 2y + z
    T = [[0, 3, 5, 6], [0, 1, 3, 5], [0, 2, 6, 3], [0, 4, 5, 6], [3, 5, 6, 7]]
    return _tagged(V, T, [REGION_TAG] * 5, lambda c: tag)


def _kuhn(shape):
    """Kuhn (Freudenthal) split of a structured grid of ``shape`` cells."""
    nx, ny, nz = shape
    idx = np.arange((nx + 1) * (ny + 1) * (nz + 1)).reshape(nx + 1, ny + 1, nz + 1)
    tets = []
    for perm in itertools.permutations(range(3)):
        steps = [np.eye(3, dtype=int)[p] for p in perm]
        corners = [np.zeros(3, dtype=int)]
        for s in steps:
            corners.append(corners[-1] + s)
        cols = [idx[c[0]:c[0] + nx, c[1]:c[1] + ny, c[2]:c[2] + nz].ravel() for c in corners]
        tets.append(np.stack(cols, axis=1))
    return np.concatenate(tets)


def box_mesh(lengths, cells, center=(0.0, 0.0, 0.0), tag=RADIATING_TAG, region_tagger=None) -> Mesh:
    """Kuhn-split box with all boundary faces tagged ``tag``."""
    axes = [np.linspace(-0.5 * L, 0.5 * L, n + 1) + c for L, n, c in zip(lengths, cells, center)]
    V = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    T = _kuhn(cells)
    tags = (np.full(len(T), REGION_TAG) if region_tagger is None
            else np.array([region_tagger(c) for c in V[T].mean(axis=1)]))
    return _tagged(V, T, tags, lambda c: tag)


def trimmed_box(cells, drop=0, spacing=0.05) -> Mesh:
    """Kuhn box with up to two corner tetrahedra removed.

    Gives tetrahedron counts that are not multiples of six (e.g. 1366 from
    ``cells=(4, 3, 19), drop=2``).  Each dropped tetrahedron has one face on
    the box surface, so the boundary stays a closed manifold.
    """
    if drop not in (0, 1, 2):
        raise ValueError("drop must be 0, 1 or 2")
    cells = tuple(int(c) for c in cells)
    m = box_mesh(tuple(spacing * c for c in cells), cells)
    keep = np.ones(m.n_tet, dtype=bool)
    keep[[0, int(np.prod(cells)) - 1][:drop]] = False  # first permutation block, first and last cell
    return _tagged(m.vertices, m.tets[keep], m.tet_tags[keep], lambda c: RADIATING_TAG)


def plate_mesh(side, thickness, spacing, layers=1) -> Mesh:
    """Square dielectric plate in the xy-plane centred at the origin."""
    n = max(1, int(round(side / spacing)))
    return box_mesh((side, side, thickness), (n, n, layers))


def _cube_to_sphere(q):
    x, y, z = q[:, 0], q[:, 1], q[:, 2]
    x2, y2, z2 = x * x, y * y, z * z
    return np.stack([x * np.sqrt(1 - y2 / 2 - z2 / 2 + y2 * z2 / 3),
                     y * np.sqrt(1 - z2 / 2 - x2 / 2 + z2 * x2 / 3),
                     z * np.sqrt(1 - x2 / 2 - y2 / 2 + x2 * y2 / 3)], axis=1)


def ball_mesh(radius, n) -> Mesh:
    """Solid ball from a mapped ``n``-cell-per-side cube (Kuhn split).

    All boundary faces carry :data:`RADIATING_TAG`.
    """
    t = np.linspace(-1.0, 1.0, n + 1)
    P = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)
    m = np.abs(P).max(axis=1)
    q = np.divide(P, m[:, None], out=np.zeros_like(P), where=m[:, None] > 0)
    V = radius * m[:, None] * _cube_to_sphere(q)
    T = _kuhn((n, n, n))
    return _tagged(V, T, np.full(len(T), REGION_TAG), lambda c: RADIATING_TAG)


def fibonacci_sphere(n):
    """Triangulated unit sphere on ``n`` Fibonacci points, outward oriented."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (1.0 + 5.0 ** 0.5) * i
    r = np.sqrt(1.0 - z * z)
    P = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    tri = ConvexHull(P).simplices.copy()
    X = P[tri]
    out = np.einsum("ij,ij->i", np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]), X.mean(axis=1)) < 0
    tri[out, 1], tri[out, 2] = tri[out, 2], tri[out, 1].copy()
    return P, tri


def shell_mesh(inner, outer, n_surface, layers=1, region_tags=None,
               inner_tag=PEC_TAG, outer_tag=RADIATING_TAG) -> Mesh:
    """Spherical shell by radial extrusion of a Fibonacci triangulation.

    Each prism is split into three tetrahedra with quad diagonals chosen
    from the lowest vertex index, which keeps neighbouring prisms conforming.

    Parameters
    ----------
    inner, outer : float
        Radii of the shell.
    n_surface : int
        Number of points on each spherical layer.
    layers : int
        Number of radial layers.
    region_tags : sequence of int, optional
        Region tag per layer (innermost first).  Defaults to one region.
    """
    P, tri = fibonacci_sphere(n_surface)
    radii = np.linspace(inner, outer, layers + 1)
    V = np.concatenate([r * P for r in radii])
    tags = [REGION_TAG] * layers if region_tags is None else list(region_tags)
    s = np.sort(tri, axis=1)
    a, b, c = s[:, 0], s[:, 1], s[:, 2]
    tets, ttags = [], []
    for k in range(layers):
        o0, o1 = k * n_surface, (k + 1) * n_surface
        A, B, Cc = a + o0, b + o0, c + o0
        A1, B1, C1 = a + o1, b + o1, c + o1
        tets.append(np.stack([A, B, Cc, C1], 1))
        tets.append(np.stack([A, B, B1, C1], 1))
        tets.append(np.stack([A, A1, B1, C1], 1))
        ttags += [tags[k]] * (3 * len(tri))
    T = np.concatenate(tets)
    mid = 0.5 * (inner + outer)
    return _tagged(V, T, ttags, lambda cen: inner_tag if np.linalg.norm(cen) < mid else outer_tag)


def mean_edge(n_surface, inner, outer, layers):
    return shell_mesh(inner, outer, n_surface, layers).mean_edge_length()


def shell_for_edge(inner, outer, target, layers=None, region_tags=None) -> Mesh:
    """Shell whose mean edge length is close to ``target``.

    The number of radial layers defaults to ``ceil(thickness / target)``
    but at least two (a single layer of lowest-order elements cannot
    represent the field across the coating), and the surface point count
    is found by bisection.
    """
    if layers is None:
        layers = max(2, int(math.ceil((outer - inner) / target - 1e-9)))
    lo, hi = 12, 12
    while mean_edge(hi, inner, outer, layers) > target:
        lo, hi = hi, hi * 2
    while hi - lo > max(1, lo // 200):
        mid = (lo + hi) // 2
        if mean_edge(mid, inner, outer, layers) > target:
            lo = mid
        else:
            hi = mid
    return shell_mesh(inner, outer, hi, layers, region_tags)
