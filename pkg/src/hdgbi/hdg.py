"""HDG element blocks, Schur complement and field recovery.

Per tetrahedron the local unknowns are six electric and six magnetic
Whitney coefficients, ordered ``[E(6); H(6)]``.  The hybrid unknown lives on
faces as three face-local Whitney coefficients.  With ``tau`` the
stabilisation parameter the local problem is

    (e, jk eps E) - (curl e, H) + <n x e, Lam>                       = 0
    (h, jk mu H) + (h, curl E) + tau <n x h, n x H> - tau <n x h, n x Lam> = 0

and the face conditions enforce continuity of the numerical trace
``n x E + tau (H_t - Lam)``.  Eliminating the local fields per element gives
``Q = L - B A^-1 F`` on the skeleton.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import TET_EDGES, TET_FACES, TRI_EDGES, edge_signs, tet_gradients
from .formulation import Formulation
from .mesh import FaceClass, Skeleton
from .quadrature import quad_rule


class AssemblyError(RuntimeError):
    """Raised when an element block is singular or a DOF map is inconsistent."""


@dataclass
class ElementBlocks:
    """Element matrices of all (or a subset of) tetrahedra.

    Attributes
    ----------
    A : ndarray (nt, 12, 12)
    F : ndarray (nt, 12, 12)
        Columns are the hybrid DOFs of the four faces, face k first at 3k.
    B : ndarray (nt, 12, 12)
        Rows are the hybrid DOFs of the four faces.
    L : ndarray (nt, 12, 12)
        Element part of the hybrid self terms (block diagonal).
    dofs : ndarray (nt, 12)
        Global hybrid DOF of each column of ``F``.
    """

    A: np.ndarray
    F: np.ndarray
    B: np.ndarray
    L: np.ndarray
    dofs: np.ndarray
    _AinvF: np.ndarray | None = None

    @property
    def AinvF(self):
        if self._AinvF is None:
            self._AinvF = _solve_blocks(self.A, self.F)
        return self._AinvF

    def schur(self):
        """Element Schur complements ``L - B A^-1 F`` (nt, 12, 12)."""
        return self.L - self.B @ self.AinvF


def _solve_blocks(A, F, ids=None):
    try:
        X = np.linalg.solve(A, F)
    except np.linalg.LinAlgError:
        X = None
    if X is None or not np.isfinite(X).all():
        for i in range(len(A)):
            try:
                xi = np.linalg.solve(A[i], F[i])
                ok = np.isfinite(xi).all()
            except np.linalg.LinAlgError:
                ok = False
            if not ok:
                raise AssemblyError(f"singular element block A_i for tetrahedron {i if ids is None else ids[i]}")
    cond = np.linalg.cond(A)
    bad = np.nonzero(~(cond < 1e14))[0]
    if len(bad):
        i = int(bad[0])
        raise AssemblyError(f"singular element block A_i for tetrahedron {i if ids is None else ids[i]}")
    return X


def _face_maps(skeleton: Skeleton, tets):
    """For each tet and local face: tet-local indices of the sorted face vertices."""
    T = skeleton.mesh.tets[tets]
    fv = T[:, TET_FACES]  # (nt, 4, 3) global ids in tet-local order
    perm = np.argsort(fv, axis=2)
    return np.take_along_axis(np.broadcast_to(TET_FACES, fv.shape), perm, axis=2)


def face_integrals(grads, vol, signs, loc, degree=4):
    """Face integrals of Whitney traces against face-local 2D Whitney functions.

    Parameters
    ----------
    grads : (nt, 4, 3) barycentric gradients
    vol : (nt,) volumes
    signs : (nt, 6) edge signs
    loc : (nt, 4, 3) tet-local vertex index of each sorted face vertex
    degree : quadrature degree on faces

    Returns
    -------
    dict with arrays (nt, 4, ...):
        ``E`` (6, 3): <n x W_m, eta_n>;  ``G`` (6, 3): <W_m, eta_n>;
        ``S`` (6, 6): <W_m^t, W_n^t>;  ``N`` (3, 3): <eta_m, eta_n>;
        ``normal`` (3,), ``area``.
    """
    rule = quad_rule("triangle", degree)
    nt = len(vol)
    mu = rule.points  # (Q, 3) w.r.t. sorted face vertices
    Q = len(mu)
    gnorm = np.linalg.norm(grads, axis=2)  # (nt, 4)
    normal = -grads / gnorm[..., None]  # outward normal of face k
    area = 3.0 * vol[:, None] * gnorm  # (nt, 4)
    lam = np.zeros((nt, 4, Q, 4))
    idx = np.broadcast_to(loc[:, :, None, :], (nt, 4, Q, 3))
    np.put_along_axis(lam, idx, np.broadcast_to(mu, (nt, 4, Q, 3)), axis=3)
    a, b = TET_EDGES[:, 0], TET_EDGES[:, 1]
    # Whitney values at face points (nt, 4, Q, 6, 3)
    W = (lam[..., a, None] * grads[:, None, None, b, :] - lam[..., b, None] * grads[:, None, None, a, :])
    W *= signs[:, None, None, :, None]
    # surface gradients of face barycentrics: tangential part of tet gradients
    gf = np.take_along_axis(grads[:, None, :, :], loc[..., None], axis=2)  # (nt, 4, 3, 3)
    gf = gf - np.einsum("tkij,tkj->tki", gf, normal)[..., None] * normal[:, :, None, :]
    ea, eb = TRI_EDGES[:, 0], TRI_EDGES[:, 1]
    eta = (mu[None, None, :, ea, None] * gf[:, :, None, eb, :]
           - mu[None, None, :, eb, None] * gf[:, :, None, ea, :])  # (nt, 4, Q, 3, 3)
    wq = rule.weights * 2.0  # integrate over faces of area ``area``
    wa = wq[None, None, :] * area[:, :, None]
    nW = np.cross(normal[:, :, None, None, :], W)
    Wt = W - np.einsum("tkqmi,tki->tkqm", W, normal)[..., None] * normal[:, :, None, None, :]
    out = {
        "E": np.einsum("tkq,tkqmi,tkqni->tkmn", wa, nW, eta),
        "G": np.einsum("tkq,tkqmi,tkqni->tkmn", wa, W, eta),
        "S": np.einsum("tkq,tkqmi,tkqni->tkmn", wa, Wt, Wt),
        "N": np.einsum("tkq,tkqmi,tkqni->tkmn", wa, eta, eta),
        "normal": normal,
        "area": area,
    }
    return out


def volume_integrals(grads, vol, signs, degree=4):
    """Whitney mass matrices (nt, 6, 6) and curl couplings (nt, 6, 6).

    ``K[m, n] = (curl W_m, W_n)``.
    """
    rule = quad_rule("tetrahedron", degree)
    lam = rule.points
    a, b = TET_EDGES[:, 0], TET_EDGES[:, 1]
    W = (lam[None, :, a, None] * grads[:, None, b, :] - lam[None, :, b, None] * grads[:, None, a, :])
    W *= signs[:, None, :, None]
    w = rule.weights * 6.0 * vol[:, None]
    M = np.einsum("tq,tqmi,tqni->tmn", w, W, W)
    curl = 2.0 * np.cross(grads[:, a], grads[:, b]) * signs[..., None]
    intW = np.einsum("tq,tqni->tni", w, W)
    K = np.einsum("tmi,tni->tmn", curl, intW)
    return M, K, curl


def assemble_elements(skeleton: Skeleton, eps, mu, k0, form: Formulation = Formulation(),
                      tets=None, vol_degree=4, face_degree=4, eliminate=True) -> ElementBlocks:
    """Element blocks for the tetrahedra ``tets`` (default: all).

    Parameters
    ----------
    skeleton : Skeleton
    eps, mu : array_like (nt,)
        Relative permittivity and permeability per tetrahedron (full mesh).
    k0 : float
        Free-space wavenumber.
    form : Formulation
        Supplies ``tau``.
    eliminate : bool
        Also compute ``A^-1 F`` (and check every ``A_i`` for singularity).
    """
    mesh = skeleton.mesh
    tets = np.arange(mesh.n_tet) if tets is None else np.atleast_1d(np.asarray(tets))
    tau = form.tau
    X = mesh.vertices[mesh.tets[tets]]
    grads, vol = tet_gradients(X)
    if (vol <= 0).any():
        raise AssemblyError("non-positive tetrahedron volume; orientation not fixed")
    signs = edge_signs(mesh.tets[tets])
    loc = _face_maps(skeleton, tets)
    M, K, _ = volume_integrals(grads, vol, signs, vol_degree)
    fi = face_integrals(grads, vol, signs, loc, face_degree)
    nt = len(tets)
    eps = np.asarray(eps, dtype=complex)[tets] if np.ndim(eps) else np.full(nt, complex(eps))
    mu = np.asarray(mu, dtype=complex)[tets] if np.ndim(mu) else np.full(nt, complex(mu))

    A = np.zeros((nt, 12, 12), dtype=complex)
    A[:, :6, :6] = 1j * k0 * eps[:, None, None] * M
    A[:, :6, 6:] = -K
    A[:, 6:, :6] = np.transpose(K, (0, 2, 1))
    A[:, 6:, 6:] = 1j * k0 * mu[:, None, None] * M + tau * fi["S"].sum(axis=1)

    F = np.zeros((nt, 12, 12), dtype=complex)
    B = np.zeros((nt, 12, 12), dtype=complex)
    L = np.zeros((nt, 12, 12), dtype=complex)
    for k in range(4):
        cols = slice(3 * k, 3 * k + 3)
        F[:, :6, cols] = fi["E"][:, k]
        F[:, 6:, cols] = -tau * fi["G"][:, k]
        B[:, cols, :6] = np.transpose(fi["E"][:, k], (0, 2, 1))
        B[:, cols, 6:] = tau * np.transpose(fi["G"][:, k], (0, 2, 1))
        L[:, cols, cols] = -tau * fi["N"][:, k]
    faces = skeleton.tet_faces[tets]
    dofs = skeleton.face_dofs(faces).reshape(nt, 12)
    blocks = ElementBlocks(A, F, B, L, dofs)
    if eliminate:
        blocks._AinvF = _solve_blocks(A, F, ids=tets)
    return blocks


def assemble_element(skeleton: Skeleton, tet: int, eps, mu, k0, form: Formulation = Formulation(),
                     eliminate=True):
    """Blocks ``(A_i, F_i, B_i, L_i, dofs)`` of a single tetrahedron."""
    b = assemble_elements(skeleton, eps, mu, k0, form, tets=[tet], eliminate=eliminate)
    return b.A[0], b.F[0], b.B[0], b.L[0], b.dofs[0]


def gamma_face_couplings(skeleton: Skeleton, degree=4):
    """Integrals of face Whitney functions against RWG pieces on radiating faces.

    For radiating face g with sorted vertices, local 2D edge i and local
    vertex b (RWG piece ``r - v_b``, unscaled):

    ``P[g, i, b] = <eta_i, r - v_b>`` and ``Px[g, i, b] = <eta_i, n x (r - v_b)>``.
    """
    from .basis import tri_geometry

    rule = quad_rule("triangle", degree)
    Xg = skeleton.gamma_vertices()
    n = skeleton.gamma_normals()
    area, _, grads = tri_geometry(Xg)
    mu = rule.points
    ea, eb = TRI_EDGES[:, 0], TRI_EDGES[:, 1]
    eta = mu[None, :, ea, None] * grads[:, None, eb, :] - mu[None, :, eb, None] * grads[:, None, ea, :]
    r = np.einsum("qa,gai->gqi", mu, Xg)
    t = r[:, :, None, :] - Xg[:, None, :, :]  # (ng, Q, 3 local vertex, 3)
    nt_ = np.cross(n[:, None, None, :], t)
    w = 2.0 * rule.weights[None, :] * area[:, None]
    P = np.einsum("gq,gqia,gqba->gib", w, eta, t)
    Px = np.einsum("gq,gqia,gqba->gib", w, eta, nt_)
    return P, Px


def rwg_scale(skeleton: Skeleton):
    """Signed RWG coefficient ``+-l/(2A)`` of each (radiating face, local vertex)."""
    from .basis import tri_geometry

    Xg = skeleton.gamma_vertices()
    area, _, _ = tri_geometry(Xg)
    opp = np.array([(1, 2), (0, 2), (0, 1)])
    ell = np.linalg.norm(Xg[:, opp[:, 0]] - Xg[:, opp[:, 1]], axis=2)
    return skeleton.gamma_sign * ell / (2.0 * area[:, None])


@dataclass
class HdgSystem:
    """Skeleton system and its couplings to the surface currents.

    Attributes
    ----------
    Q : csr_matrix (n_hdg, n_hdg)
    D_LJ, D_LM : csr_matrix (n_hdg, n_rwg)
        Nonzero only in rows of radiating-face DOFs.
    n_s : int
        Number of hybrid DOFs not on the radiating surface (they come first).
    blocks : ElementBlocks
    """

    skeleton: Skeleton
    Q: sp.csr_matrix
    D_LJ: sp.csr_matrix
    D_LM: sp.csr_matrix
    n_s: int
    blocks: ElementBlocks
    form: Formulation

    @property
    def n_hdg(self):
        return self.Q.shape[0]

    @property
    def D_LX(self):
        """``[D_LJ, D_LM]`` as one (n_hdg, 2 n_rwg) matrix."""
        return sp.hstack([self.D_LJ, self.D_LM], format="csr")


def _gamma_extra(skeleton: Skeleton, blocks: ElementBlocks, form: Formulation):
    """Additional ``-tau <eta, eta>`` on radiating faces (exterior side)."""
    g = skeleton.gamma_faces
    t = skeleton.face_tets[g, 0]
    k = skeleton.face_local[g, 0]
    N = -blocks.L[t[:, None, None], 3 * k[:, None, None] + np.arange(3)[None, :, None],
                  3 * k[:, None, None] + np.arange(3)[None, None, :]]
    dofs = skeleton.face_dofs(g)
    rows = np.broadcast_to(dofs[:, :, None], N.shape)
    cols = np.broadcast_to(dofs[:, None, :], N.shape)
    return rows.ravel(), cols.ravel(), (-N).ravel()  # already carries tau


def assemble_hdg(skeleton: Skeleton, eps, mu, k0, form: Formulation = Formulation(),
                 chunk=4096) -> HdgSystem:
    """Assemble ``Q`` by per-element elimination plus the current couplings.

    Elements are processed in fixed-size chunks and merged in chunk order so
    the sparse result is independent of any parallel schedule.
    """
    mesh = skeleton.mesh
    nt = mesh.n_tet
    n = 3 * skeleton.n_face
    parts = []
    all_blocks = []
    for start in range(0, nt, chunk):
        idx = np.arange(start, min(nt, start + chunk))
        b = assemble_elements(skeleton, eps, mu, k0, form, tets=idx)
        all_blocks.append(b)
        S = b.schur()
        rows = np.broadcast_to(b.dofs[:, :, None], S.shape).ravel()
        cols = np.broadcast_to(b.dofs[:, None, :], S.shape).ravel()
        parts.append((rows, cols, S.ravel()))
    blocks = ElementBlocks(*(np.concatenate([getattr(b, f) for b in all_blocks])
                             for f in ("A", "F", "B", "L", "dofs")))
    blocks._AinvF = np.concatenate([b.AinvF for b in all_blocks])
    parts.append(_gamma_extra(skeleton, blocks, form))
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    Q = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    Q.sum_duplicates()
    D_LJ, D_LM = lambda_current_couplings(skeleton, form)
    n_s = 3 * int(np.count_nonzero(skeleton.face_class != FaceClass.RADIATING))
    return HdgSystem(skeleton, Q, D_LJ, D_LM, n_s, blocks, form)


def lambda_current_couplings(skeleton: Skeleton, form: Formulation = Formulation()):
    """``D_LJ = -tau <eta, n x j>`` and ``D_LM = s <eta, m>`` (sparse, n_hdg x n_rwg)."""
    n = 3 * skeleton.n_face
    nr = skeleton.n_rwg
    P, Px = gamma_face_couplings(skeleton)
    c = rwg_scale(skeleton)
    dofs = skeleton.face_dofs(skeleton.gamma_faces)  # (ng, 3)
    rwg = skeleton.gamma_rwg  # (ng, 3)
    rows = np.broadcast_to(dofs[:, :, None], P.shape)
    cols = np.broadcast_to(rwg[:, None, :], P.shape)
    keep = cols >= 0
    scale = c[:, None, :]
    vj = (-form.tau * Px * scale)[keep]
    vm = (form.m_flux_sign * P * scale)[keep]
    r, cc = rows[keep], cols[keep]
    D_LJ = sp.coo_matrix((vj, (r, cc)), shape=(n, nr)).tocsr()
    D_LM = sp.coo_matrix((vm, (r, cc)), shape=(n, nr)).tocsr()
    return D_LJ, D_LM


def recover_fields(hdg: HdgSystem, lam):
    """Local coefficients ``(E, H)``, each (nt, 6), from the hybrid vector."""
    lam = np.asarray(lam)
    if lam.shape != (hdg.n_hdg,):
        raise ValueError(f"hybrid vector has shape {lam.shape}, expected ({hdg.n_hdg},)")
    b = hdg.blocks
    x = -np.einsum("tij,tj->ti", b.AinvF, lam[b.dofs])
    return x[:, :6], x[:, 6:]


def assemble_global(skeleton: Skeleton, eps, mu, k0, form: Formulation = Formulation()):
    """Globally assembled sparse ``A, F, B, L`` (oracle use only).

    ``A`` is block diagonal (n_dg x n_dg) with element ``i`` at rows
    ``12 i .. 12 i + 11``.
    """
    b = assemble_elements(skeleton, eps, mu, k0, form)
    nt = len(b.A)
    n = 3 * skeleton.n_face
    dg = np.arange(12 * nt).reshape(nt, 12)
    A = sp.block_diag(list(b.A), format="csr")

    def coo(vals, r, c, shape):
        R = np.broadcast_to(r[:, :, None], vals.shape).ravel()
        C = np.broadcast_to(c[:, None, :], vals.shape).ravel()
        return sp.coo_matrix((vals.ravel(), (R, C)), shape=shape).tocsr()

    F = coo(b.F, dg, b.dofs, (12 * nt, n))
    B = coo(b.B, b.dofs, dg, (n, 12 * nt))
    L = coo(b.L, b.dofs, b.dofs, (n, n))
    r, c, v = _gamma_extra(skeleton, b, form)
    L = L + sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    return A, F, B, L


def dump_matrix_market(path, matrix, comment=""):
    """Write a sparse matrix in Matrix Market coordinate format (complex general)."""
    import scipy.io

    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix).astype(complex), comment=comment, field="complex",
                     symmetry="general")
