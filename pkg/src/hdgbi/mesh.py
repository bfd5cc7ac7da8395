"""Tetrahedral meshes, skeleton classification and DOF numbering.

The skeleton is the set of all triangular faces.  Every face is either
interior (two tetrahedra), radiating (on the truncation surface where the
boundary integral closes the problem) or PEC.  Faces and edges are keyed by
their sorted vertex tuples so numbering never depends on element order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .basis import TET_FACES, tet_gradients


class MeshError(ValueError):
    """Raised for malformed, unsupported or invalid meshes."""


class FaceClass(IntEnum):
    INTERIOR = 0
    RADIATING = 1
    PEC = 2


#: element types in MSH 2.2 that are read or skipped
_MSH_TRI, _MSH_TET = 2, 4
_MSH_SKIPPED = {1: "line", 15: "point"}


@dataclass(frozen=True)
class Mesh:
    """Validated tetrahedral mesh.

    Attributes
    ----------
    vertices : ndarray (nv, 3)
    tets : ndarray (nt, 4)
        Vertex indices, ordered so that every signed volume is positive.
    tet_tags : ndarray (nt,)
        Region tag of each tetrahedron.
    tris : ndarray (ns, 3)
        Tagged surface triangles from the file.
    tri_tags : ndarray (ns,)
    """

    vertices: np.ndarray
    tets: np.ndarray
    tet_tags: np.ndarray
    tris: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    tri_tags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_tet(self) -> int:
        return len(self.tets)

    def volumes(self):
        _, vol = tet_gradients(self.vertices[self.tets])
        return vol

    def mean_edge_length(self) -> float:
        e = np.sort(self.tets[:, [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]].reshape(-1, 2), axis=1)
        e = np.unique(e, axis=0)
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())


def make_mesh(vertices, tets, tet_tags=None, tris=None, tri_tags=None) -> Mesh:
    """Build a :class:`Mesh` from arrays, fixing orientation and validating.

    Raises
    ------
    MeshError
        On out-of-range indices or degenerate elements.
    """
    V = np.ascontiguousarray(vertices, dtype=float).reshape(-1, 3)
    T = np.array(tets, dtype=np.int64).reshape(-1, 4)
    tags = np.zeros(len(T), dtype=np.int64) if tet_tags is None else np.asarray(tet_tags, dtype=np.int64)
    S = np.zeros((0, 3), dtype=np.int64) if tris is None else np.array(tris, dtype=np.int64).reshape(-1, 3)
    stags = np.zeros(len(S), dtype=np.int64) if tri_tags is None else np.asarray(tri_tags, dtype=np.int64)
    if len(T) == 0:
        raise MeshError("mesh has no tetrahedra")
    if len(tags) != len(T) or len(stags) != len(S):
        raise MeshError("tag arrays do not match element arrays")
    for name, arr in (("tetrahedron", T), ("triangle", S)):
        if arr.size and (arr.min() < 0 or arr.max() >= len(V)):
            bad = np.nonzero((arr < 0).any(1) | (arr >= len(V)).any(1))[0]
            raise MeshError(f"{name} vertex index out of range in elements {bad.tolist()[:20]}")

    X = V[T]
    vol = np.einsum("ij,ij->i", np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]), X[:, 3] - X[:, 0]) / 6.0
    edges = np.linalg.norm(X[:, [1, 2, 3, 2, 3, 3]] - X[:, [0, 0, 0, 1, 1, 2]], axis=2)
    h = edges.mean()
    bad = np.nonzero(np.abs(vol) < 1e-12 * h**3)[0]
    if len(bad):
        raise MeshError(f"degenerate tetrahedra (near-zero volume): {bad.tolist()[:20]}")
    flip = vol < 0
    T = T.copy()
    T[flip, 2], T[flip, 3] = T[flip, 3], T[flip, 2].copy()
    if len(S):
        Y = V[S]
        area = 0.5 * np.linalg.norm(np.cross(Y[:, 1] - Y[:, 0], Y[:, 2] - Y[:, 0]), axis=1)
        bad = np.nonzero(area < 1e-12 * h**2)[0]
        if len(bad):
            raise MeshError(f"degenerate triangles (near-zero area): {bad.tolist()[:20]}")
    for a in (V, T, tags, S, stags):
        a.setflags(write=False)
    return Mesh(V, T, tags, S, stags)


# ---------------------------------------------------------------------------
# MSH 2.2 input/output


def load_mesh(path) -> Mesh:
    """Read an ASCII Gmsh MSH 2.2 file.

    Triangles (type 2) and tetrahedra (type 4) are read with their first tag
    as physical tag.  Point and line elements are skipped with a warning, as
    are unknown sections.

    Raises
    ------
    MeshError
        With the offending line number on parse errors, for unsupported
        element types and for invalid geometry.
    """
    path = Path(path)
    if not path.is_file():
        raise MeshError(f"mesh file not found: {path}")
    lines = path.read_text().splitlines()
    nodes = {}
    tets, tet_tags, tris, tri_tags = [], [], [], []
    i = 0
    seen_format = False
    skipped = {}

    def fail(lineno, msg):
        raise MeshError(f"{path.name}:{lineno + 1}: {msg}")

    while i < len(lines):
        line = lines[i].strip()
        if not line:
            i += 1
            continue
        if not line.startswith("$"):
            fail(i, f"expected section header, got {line!r}")
        name = line[1:]
        end = "$End" + name
        if name == "MeshFormat":
            parts = lines[i + 1].split() if i + 1 < len(lines) else []
            if len(parts) < 3:
                fail(i + 1, "malformed $MeshFormat")
            if not parts[0].startswith("2."):
                fail(i + 1, f"unsupported MSH version {parts[0]}")
            if parts[1] != "0":
                fail(i + 1, "binary MSH files are not supported")
            seen_format = True
            i += 2
        elif name == "Nodes":
            try:
                n = int(lines[i + 1])
            except (ValueError, IndexError):
                fail(i + 1, "expected node count")
            for j in range(i + 2, i + 2 + n):
                try:
                    parts = lines[j].split()
                    nodes[int(parts[0])] = (float(parts[1]), float(parts[2]), float(parts[3]))
                except (ValueError, IndexError):
                    fail(j, "malformed node line")
            i += 2 + n
        elif name == "Elements":
            try:
                n = int(lines[i + 1])
            except (ValueError, IndexError):
                fail(i + 1, "expected element count")
            for j in range(i + 2, i + 2 + n):
                try:
                    parts = [int(p) for p in lines[j].split()]
                    etype, ntags = parts[1], parts[2]
                    tag = parts[3] if ntags > 0 else 0
                    conn = parts[3 + ntags:]
                except (ValueError, IndexError):
                    fail(j, "malformed element line")
                if etype == _MSH_TET:
                    if len(conn) != 4:
                        fail(j, "tetrahedron needs 4 nodes")
                    tets.append(conn)
                    tet_tags.append(tag)
                elif etype == _MSH_TRI:
                    if len(conn) != 3:
                        fail(j, "triangle needs 3 nodes")
                    tris.append(conn)
                    tri_tags.append(tag)
                elif etype in _MSH_SKIPPED:
                    skipped[etype] = skipped.get(etype, 0) + 1
                else:
                    fail(j, f"unsupported element type {etype}")
            i += 2 + n
        else:
            warnings.warn(f"{path.name}: ignoring section ${name}", stacklevel=2)
            j = i + 1
            while j < len(lines) and lines[j].strip() != end:
                j += 1
            if j >= len(lines):
                fail(i, f"unterminated section ${name}")
            i = j + 1
            continue
        if i >= len(lines) or lines[i].strip() != end:
            fail(min(i, len(lines) - 1), f"missing {end}")
        i += 1
    if not seen_format:
        raise MeshError(f"{path.name}: missing $MeshFormat section")
    for etype, count in skipped.items():
        warnings.warn(f"{path.name}: skipped {count} {_MSH_SKIPPED[etype]} elements", stacklevel=2)
    ids = np.array(sorted(nodes), dtype=np.int64)
    lookup = {nid: k for k, nid in enumerate(ids)}
    try:
        T = [[lookup[v] for v in t] for t in tets]
        S = [[lookup[v] for v in t] for t in tris]
    except KeyError as exc:
        raise MeshError(f"{path.name}: element references unknown node {exc.args[0]}") from None
    V = np.array([nodes[k] for k in ids], dtype=float)
    return make_mesh(V, T, tet_tags, S, tri_tags)


def write_mesh(mesh: Mesh, path) -> None:
    """Write ``mesh`` as ASCII MSH 2.2 (1-based node and element ids)."""
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(len(mesh.vertices))]
    out += [f"{i + 1} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(mesh.vertices.tolist())]
    out += ["$EndNodes", "$Elements", str(len(mesh.tris) + len(mesh.tets))]
    k = 1
    for tri, tag in zip(mesh.tris.tolist(), mesh.tri_tags.tolist()):
        out.append(f"{k} 2 2 {tag} {tag} {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}")
        k += 1
    for tet, tag in zip(mesh.tets.tolist(), mesh.tet_tags.tolist()):
        out.append(f"{k} 4 2 {tag} {tag} " + " ".join(str(v + 1) for v in tet))
        k += 1
    out.append("$EndElements")
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# skeleton


@dataclass(frozen=True)
class Skeleton:
    """Face classification, connectivity and hybrid/RWG numbering.

    Attributes
    ----------
    faces : ndarray (nf, 3)
        Sorted vertex ids of each face.
    face_class : ndarray (nf,)
        :class:`FaceClass` values.
    face_tets, face_local : ndarray (nf, 2)
        Adjacent tetrahedra and the local face index in each (-1 if absent).
        The first entry owns the face normal.
    face_normal : ndarray (nf, 3)
        Unit normal pointing out of ``face_tets[:, 0]``.
    tet_faces : ndarray (nt, 4)
        Global face of local face k (opposite local vertex k).
    hybrid_rank : ndarray (nf,)
        Position of the face in the hybrid ordering (non-radiating faces
        first, then radiating).  Hybrid DOF of local 2D edge i is
        ``3 * hybrid_rank + i``.
    gamma_faces : ndarray (ng,)
        Radiating faces, in increasing face index.
    gamma_rwg, gamma_sign : ndarray (ng, 3)
        RWG index of the edge opposite local vertex a of each radiating face
        (-1 if that edge carries no RWG) and the sign of the function there.
    rwg_edges : ndarray (nr, 2)
        Vertex pairs of the RWG edges, lexicographically sorted.
    rwg_faces : ndarray (nr, 2)
        Indices into ``gamma_faces`` of the plus and minus triangles.
    rwg_free : ndarray (nr, 2)
        Local vertex index (0..2) of the free vertex on each triangle.
    """

    mesh: Mesh
    faces: np.ndarray
    face_class: np.ndarray
    face_tets: np.ndarray
    face_local: np.ndarray
    face_normal: np.ndarray
    tet_faces: np.ndarray
    hybrid_rank: np.ndarray
    gamma_faces: np.ndarray
    gamma_rwg: np.ndarray
    gamma_sign: np.ndarray
    rwg_edges: np.ndarray
    rwg_faces: np.ndarray
    rwg_free: np.ndarray
    closed: bool

    @property
    def n_face(self) -> int:
        return len(self.faces)

    @property
    def n_rwg(self) -> int:
        return len(self.rwg_edges)

    @property
    def n_gamma_hybrid(self) -> int:
        return 3 * len(self.gamma_faces)

    def count(self, cls: FaceClass) -> int:
        return int(np.count_nonzero(self.face_class == cls))

    def face_dofs(self, faces):
        """Global hybrid DOFs (…, 3) of the given faces."""
        return 3 * self.hybrid_rank[np.asarray(faces)][..., None] + np.arange(3)

    def gamma_vertices(self):
        """Vertex coordinates (ng, 3, 3) of the radiating faces."""
        return self.mesh.vertices[self.faces[self.gamma_faces]]

    def gamma_normals(self):
        return self.face_normal[self.gamma_faces]


def build_skeleton(mesh: Mesh, pec_tags=(), radiating_tags=()) -> Skeleton:
    """Classify all faces of ``mesh`` and number hybrid and RWG unknowns.

    Boundary faces (one adjacent tetrahedron) are matched against the tagged
    surface triangles of the mesh.  A radiating surface edge that belongs to
    a single radiating face is accepted only where the surface meets a PEC
    face; such rim edges carry no RWG function and the surface is flagged as
    not closed.

    Raises
    ------
    MeshError
        For untagged boundary faces, faces with more than two tetrahedra,
        conflicting tags, or an open radiating surface with a free rim.
    """
    pec_tags = set(int(t) for t in pec_tags)
    radiating_tags = set(int(t) for t in radiating_tags)
    if pec_tags & radiating_tags:
        raise MeshError(f"tags used both as PEC and radiating: {sorted(pec_tags & radiating_tags)}")
    T = mesh.tets
    nt = len(T)
    local = np.sort(T[:, TET_FACES], axis=2)  # (nt, 4, 3)
    flat = local.reshape(-1, 3)
    faces, inverse, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if (counts > 2).any():
        bad = np.nonzero(counts > 2)[0]
        raise MeshError(f"faces shared by more than two tetrahedra: {faces[bad].tolist()[:10]}")
    nf = len(faces)
    tet_faces = inverse.reshape(nt, 4)
    owner = np.repeat(np.arange(nt), 4)
    lface = np.tile(np.arange(4), nt)
    order = np.argsort(inverse, kind="stable")
    face_tets = -np.ones((nf, 2), dtype=np.int64)
    face_local = -np.ones((nf, 2), dtype=np.int64)
    first = np.ones(len(order), dtype=bool)
    inv_sorted = inverse[order]
    first[1:] = inv_sorted[1:] != inv_sorted[:-1]
    face_tets[inv_sorted[first], 0] = owner[order][first]
    face_local[inv_sorted[first], 0] = lface[order][first]
    face_tets[inv_sorted[~first], 1] = owner[order][~first]
    face_local[inv_sorted[~first], 1] = lface[order][~first]

    # outward normals of the owning tet
    V = mesh.vertices
    P = V[faces]
    nrm = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]
    opp = V[T[face_tets[:, 0], face_local[:, 0]]]
    flip = np.einsum("ij,ij->i", nrm, opp - P[:, 0]) > 0
    nrm[flip] *= -1.0

    # boundary tags
    cls = np.full(nf, FaceClass.INTERIOR, dtype=np.int8)
    boundary = counts == 1
    tag_of = {}
    for tri, tag in zip(np.sort(mesh.tris, axis=1).tolist(), mesh.tri_tags.tolist()):
        key = tuple(tri)
        if key in tag_of and tag_of[key] != tag:
            raise MeshError(f"surface triangle {key} carries conflicting tags {tag_of[key]} and {tag}")
        tag_of[key] = tag
    untagged = []
    for f in np.nonzero(boundary)[0]:
        tag = tag_of.get(tuple(faces[f].tolist()))
        if tag in pec_tags:
            cls[f] = FaceClass.PEC
        elif tag in radiating_tags:
            cls[f] = FaceClass.RADIATING
        else:
            untagged.append(int(f))
    if untagged:
        raise MeshError(f"untagged boundary faces (no PEC/radiating tag): {untagged[:20]}")

    # hybrid ordering: non-radiating faces first
    gamma = np.nonzero(cls == FaceClass.RADIATING)[0]
    rest = np.nonzero(cls != FaceClass.RADIATING)[0]
    rank = np.empty(nf, dtype=np.int64)
    rank[rest] = np.arange(len(rest))
    rank[gamma] = len(rest) + np.arange(len(gamma))

    # radiating-surface edges
    ng = len(gamma)
    gf = faces[gamma]
    # local edge opposite vertex a: the other two vertices
    opp_pairs = np.array([(1, 2), (0, 2), (0, 1)])
    ge = gf[:, opp_pairs]  # (ng, 3, 2), already sorted because gf is sorted
    ge_flat = ge.reshape(-1, 2)
    edges, einv, ecount = np.unique(ge_flat, axis=0, return_inverse=True, return_counts=True)
    einv = einv.ravel()
    if (ecount > 2).any():
        raise MeshError("non-manifold radiating surface: edge shared by more than two radiating faces")
    closed = bool((ecount == 2).all())
    if not closed:
        pec_edges = set()
        for f in np.nonzero(cls == FaceClass.PEC)[0]:
            a, b, c = faces[f].tolist()
            pec_edges.update({(a, b), (a, c), (b, c)})
        rim = [tuple(e) for e in edges[ecount == 1].tolist()]
        if any(e not in pec_edges for e in rim):
            raise MeshError("radiating surface not closed: free rim edges not bounded by PEC faces")
    paired = np.nonzero(ecount == 2)[0]
    rwg_id = -np.ones(len(edges), dtype=np.int64)
    rwg_id[paired] = np.arange(len(paired))
    gamma_rwg = rwg_id[einv].reshape(ng, 3)
    # for each paired edge: the two (face, local) slots in increasing slot order
    order = np.argsort(einv, kind="stable")
    es = einv[order]
    starts = np.searchsorted(es, paired)
    s_plus = order[starts]
    s_minus = order[starts + 1]
    rwg_faces = np.stack([s_plus // 3, s_minus // 3], axis=1)
    rwg_free = np.stack([s_plus % 3, s_minus % 3], axis=1)
    gamma_sign = np.zeros((ng, 3))
    flat_sign = gamma_sign.reshape(-1)
    flat_sign[s_plus] = 1.0
    flat_sign[s_minus] = -1.0

    return Skeleton(mesh, faces, cls, face_tets, face_local, nrm, tet_faces, rank, gamma,
                    gamma_rwg, gamma_sign, edges[paired], rwg_faces, rwg_free, closed)


@dataclass(frozen=True)
class DofCounts:
    n_hdg: int
    n_bi: int
    n_dg: int
    n_rwg: int
    n_tet: int
    n_face: int


def count_dofs(skeleton: Skeleton) -> DofCounts:
    """Unknown counts of the coupled system."""
    nt = skeleton.mesh.n_tet
    return DofCounts(n_hdg=3 * skeleton.n_face, n_bi=2 * skeleton.n_rwg, n_dg=12 * nt,
                     n_rwg=skeleton.n_rwg, n_tet=nt, n_face=skeleton.n_face)


# ---------------------------------------------------------------------------
# materials


@dataclass(frozen=True)
class MaterialMap:
    """Relative permittivity and permeability per region tag."""

    table: dict

    def __post_init__(self):
        for tag, (eps, mu) in self.table.items():
            for name, val in (("eps_r", eps), ("mu_r", mu)):
                if complex(val).imag > 1e-14:
                    raise MeshError(f"region {tag}: {name}={val} is active (Im > 0 under exp(jwt))")

    @classmethod
    def uniform(cls, tags, eps_r=1.0, mu_r=1.0):
        return cls({int(t): (complex(eps_r), complex(mu_r)) for t in tags})

    def per_tet(self, mesh: Mesh):
        """Arrays (eps_r, mu_r) of length n_tet."""
        missing = sorted(set(np.unique(mesh.tet_tags).tolist()) - set(self.table))
        if missing:
            raise MeshError(f"no material for region tags {missing}")
        eps = np.array([complex(self.table[t][0]) for t in mesh.tet_tags.tolist()])
        mu = np.array([complex(self.table[t][1]) for t in mesh.tet_tags.tolist()])
        return eps, mu
