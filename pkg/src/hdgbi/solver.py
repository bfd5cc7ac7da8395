"""Hybrid solve: sparse LU of Q inside GMRES on the reduced current system.

The coupled system is

    [ Q     D_LX ] [Lambda]   [0]
    [ D_XL  C    ] [X     ] = [b]

with ``X = [J; M]``.  Eliminating ``Lambda`` gives the reduced operator
``C - D_XL Q^-1 D_LX`` of dimension ``N_BI = 2 n_rwg``, which is solved by
restarted GMRES; each matvec needs one pair of triangular solves with the
factors of ``Q``.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import maximum_bipartite_matching

log = logging.getLogger(__name__)

#: fill-reducing ordering handed to SuperLU (minimum degree on Q + Q^T)
ORDERING = "MMD_AT_PLUS_A"


class FactorizationError(RuntimeError):
    """Q is structurally or numerically singular."""

    def __init__(self, msg, pivot=None):
        super().__init__(msg if pivot is None else f"{msg} (pivot index {pivot})")
        self.pivot = pivot


class ConvergenceError(RuntimeError):
    """GMRES stopped before reaching the tolerance."""

    def __init__(self, msg, x=None, report=None):
        super().__init__(msg)
        self.x = x
        self.report = report


@dataclass
class QFactor:
    """Reusable LU factors of the skeleton matrix ``Q``."""

    lu: spla.SuperLU
    n: int
    nnz_q: int
    time: float

    @property
    def nnz_factors(self):
        return int(self.lu.L.nnz + self.lu.U.nnz)

    @property
    def fill_ratio(self):
        return self.nnz_factors / max(1, self.nnz_q)

    def solve(self, rhs):
        return self.lu.solve(np.asarray(rhs, dtype=complex))

    def reconstruct(self):
        """``Pr^T L U Pc^T`` as a sparse matrix (reproduces ``Q``)."""
        lu = self.lu
        n = self.n
        Pr = sp.csc_matrix((np.ones(n), (lu.perm_r, np.arange(n))), shape=(n, n))
        Pc = sp.csc_matrix((np.ones(n), (np.arange(n), lu.perm_c)), shape=(n, n))
        return (Pr.T @ (lu.L @ lu.U) @ Pc.T).tocsr()

    def residual(self, Q):
        """Relative Frobenius residual ``||Q - Pr^T L U Pc^T|| / ||Q||``."""
        D = self.reconstruct() - sp.csr_matrix(Q)
        return float(spla.norm(D) / spla.norm(Q))

    def condition_estimate(self, Q):
        """1-norm condition estimate ``||Q||_1 ||Q^-1||_1`` (Hager/Higham)."""
        n = self.n
        inv = spla.LinearOperator((n, n), matvec=self.solve, rmatvec=lambda y: self.lu.solve(y, trans="H"),
                                  dtype=complex)
        return float(spla.norm(Q, 1) * spla.onenormest(inv))


def _singular_pivot(Q):
    """First column without a structural match, or None when structurally regular."""
    S = sp.csr_matrix((np.ones(Q.nnz), Q.nonzero()), shape=Q.shape)
    match = maximum_bipartite_matching(S, perm_type="column")
    bad = np.flatnonzero(match < 0)
    return int(bad[0]) if len(bad) else None


def factorize_q(Q) -> QFactor:
    """Sparse LU of ``Q`` with a minimum-degree column ordering.

    Raises
    ------
    FactorizationError
        With the offending pivot index for structural singularity, or the
        smallest pivot of ``U`` when the factors are numerically singular.
    """
    Q = sp.csc_matrix(Q, dtype=complex)
    n = Q.shape[0]
    if Q.shape != (n, n):
        raise ValueError("Q must be square")
    piv = _singular_pivot(Q)
    if piv is not None:
        raise FactorizationError("Q is structurally singular", piv)
    t0 = time.perf_counter()
    try:
        lu = spla.splu(Q, permc_spec=ORDERING, diag_pivot_thresh=0.1,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise FactorizationError(f"LU failed: {exc}") from None
    d = np.abs(lu.U.diagonal())
    scale = np.abs(Q).max() if Q.nnz else 1.0
    k = int(np.argmin(d)) if n else 0
    if n and d[k] <= 1e-14 * scale:
        raise FactorizationError("Q is numerically singular", int(lu.perm_c[k]))
    return QFactor(lu, n, int(Q.nnz), time.perf_counter() - t0)


@dataclass
class ReducedOperator:
    """``C - D_XL Q^-1 D_LX`` acting on ``X = [J; M]``.

    ``C`` is dense; ``D_LX`` (n_hdg x N_BI) and ``D_XL`` (N_BI x n_hdg) are
    sparse.  The dense product is split into row tiles of fixed size, run on
    ``workers`` threads, so the result does not depend on the worker count.
    Matvecs do not modify the operator apart from the ``n_matvec`` counter.
    """

    qf: QFactor
    D_LX: sp.csr_matrix
    D_XL: sp.csr_matrix
    C: np.ndarray
    workers: int = 1
    tile_rows: int = 1024
    n_matvec: int = 0

    def __post_init__(self):
        n = self.C.shape[0]
        if self.C.shape != (n, n) or self.D_LX.shape != (self.qf.n, n) or self.D_XL.shape != (n, self.qf.n):
            raise ValueError("inconsistent block dimensions in the reduced operator")

    @property
    def shape(self):
        return self.C.shape

    @property
    def n_bi(self):
        return self.C.shape[0]

    def matvec(self, x, dense_first=True):
        return reduced_matvec(self, x, dense_first)

    def dense(self):
        """The reduced matrix formed column by column (small problems only)."""
        Z = self.qf.solve(self.D_LX.toarray())
        return self.C - self.D_XL @ Z

    def as_linear_operator(self):
        return spla.LinearOperator(self.shape, matvec=self.matvec, dtype=complex)

    def dense_product(self, x):
        """``C x`` by fixed row tiles."""
        n = self.n_bi
        starts = range(0, n, self.tile_rows)
        y = np.empty(n, dtype=complex)

        def tile(s):
            y[s:s + self.tile_rows] = self.C[s:s + self.tile_rows] @ x

        if self.workers > 1 and n > self.tile_rows:
            with ThreadPoolExecutor(max_workers=self.workers) as ex:
                list(ex.map(tile, starts))
        else:
            for s in starts:
                tile(s)
        return y


def reduced_matvec(op: ReducedOperator, x, dense_first=True):
    """``y = C x - D_XL Q^-1 D_LX x``.

    Steps: (a) dense product ``C x``; (b) ``u = D_LX x``; (c) forward and
    backward solves ``v = Q^-1 u``; (d) ``w = -D_XL v``; (e) ``y = Cx + w``.
    ``dense_first`` only reorders (a) relative to (b)-(d).
    """
    x = np.asarray(x, dtype=complex)
    if x.shape != (op.n_bi,):
        raise ValueError(f"vector has shape {x.shape}, expected ({op.n_bi},)")
    op.n_matvec += 1
    if dense_first:
        cx = op.dense_product(x)
    u = op.D_LX @ x
    v = op.qf.solve(u)
    w = -(op.D_XL @ v)
    if not dense_first:
        cx = op.dense_product(x)
    return cx + w


@dataclass
class SolveReport:
    """Iteration history and timings of one solve."""

    converged: bool = False
    iterations: int = 0
    restarts: int = 0
    residuals: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    cycle_starts: list = field(default_factory=list)
    final_residual: float = 0.0
    precond: str = "none"
    timings: dict = field(default_factory=dict)
    fill: dict = field(default_factory=dict)
    condition_estimate: float | None = None

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("iteration,relative_residual\n")
            for i, r in zip(self.steps, self.residuals):
                fh.write(f"{i},{r:.12e}\n")


def gmres(matvec, b, tol=1e-3, restart=50, max_iter=1000, precond=None, x0=None):
    """Restarted GMRES with right preconditioning.

    Arnoldi uses modified Gram-Schmidt and the least-squares problem is
    updated with Givens rotations.  Convergence is declared on the true
    relative residual ``||b - A x|| / ||b||`` recomputed at every restart.

    Returns
    -------
    x : ndarray
    report : SolveReport
        ``residuals`` holds, for every restart cycle, the true residual at
        its start followed by the Givens estimate after each inner
        iteration, and finally the true residual of the returned iterate.
        ``steps`` gives the iteration count of each entry and
        ``cycle_starts`` indexes the cycle starts.
    """
    b = np.asarray(b, dtype=complex)
    n = len(b)
    rep = SolveReport(precond="none" if precond is None else "sai")
    nb = np.linalg.norm(b)
    if nb == 0.0:
        rep.converged = True
        rep.residuals = [0.0]
        rep.steps = [0]
        return np.zeros(n, dtype=complex), rep
    apply_m = (lambda v: v) if precond is None else precond
    x = np.zeros(n, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    r = b - matvec(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    best_x, best_res = x.copy(), beta / nb
    m = max(1, int(restart))
    while True:
        if beta / nb <= tol:
            rep.converged = True
            break
        if rep.iterations >= max_iter:
            break
        rep.cycle_starts.append(len(rep.residuals))
        rep.residuals.append(float(beta / nb))
        rep.steps.append(rep.iterations)
        Vb = np.zeros((m + 1, n), dtype=complex)
        H = np.zeros((m + 1, m), dtype=complex)
        cs = np.zeros(m, dtype=complex)
        sn = np.zeros(m, dtype=complex)
        g = np.zeros(m + 1, dtype=complex)
        g[0] = beta
        Vb[0] = r / beta
        j_used = 0
        for j in range(m):
            w = matvec(apply_m(Vb[j]))
            for i in range(j + 1):
                H[i, j] = np.vdot(Vb[i], w)
                w -= H[i, j] * Vb[i]
            H[j + 1, j] = np.linalg.norm(w)
            breakdown = abs(H[j + 1, j]) <= 1e-14 * abs(H[: j + 1, j]).max(initial=1.0)
            if not breakdown:
                Vb[j + 1] = w / H[j + 1, j]
            # rotations G_i = [[conj(c), conj(s)], [-s, c]] with c = a/d, s = b/d
            for i in range(j):
                t = np.conj(cs[i]) * H[i, j] + np.conj(sn[i]) * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            a_, b_ = H[j, j], H[j + 1, j]
            den = np.sqrt(abs(a_) ** 2 + abs(b_) ** 2)
            cs[j] = a_ / den if den else 1.0
            sn[j] = b_ / den if den else 0.0
            H[j, j] = den
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = np.conj(cs[j]) * g[j]
            rep.iterations += 1
            j_used = j + 1
            rep.residuals.append(float(abs(g[j + 1]) / nb))
            rep.steps.append(rep.iterations)
            if abs(g[j + 1]) / nb <= tol or breakdown or rep.iterations >= max_iter:
                break
        y = la.solve_triangular(H[:j_used, :j_used], g[:j_used])
        x = x + apply_m(Vb[:j_used].T @ y)
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        if beta / nb < best_res:
            best_x, best_res = x.copy(), beta / nb
        if beta / nb <= tol:
            rep.converged = True
            break
        rep.restarts += 1
        if rep.iterations >= max_iter:
            break
    rep.final_residual = float(beta / nb)
    rep.residuals.append(rep.final_residual)
    rep.steps.append(rep.iterations)
    if not rep.converged:
        x = best_x
        rep.final_residual = float(best_res)
    return x, rep


def solve(op: ReducedOperator, b, tol=1e-3, restart=50, max_iter=1000, precond=None):
    """Solve the reduced system; see :func:`gmres`.

    ``precond`` is ``None``, ``"none"`` or a :class:`SaiPreconditioner`
    (see :func:`build_sai_for`).
    """
    if isinstance(precond, str):
        if precond == "none":
            precond = None
        else:
            raise ValueError("pass a SaiPreconditioner instance to use SAI")
    t0 = time.perf_counter()
    apply = None if precond is None else precond.apply
    x, rep = gmres(op.matvec, b, tol, restart, max_iter, apply)
    rep.timings["gmres"] = time.perf_counter() - t0
    rep.fill = {"nnz_q": op.qf.nnz_q, "nnz_lu": op.qf.nnz_factors, "fill_ratio": op.qf.fill_ratio}
    if precond is not None:
        rep.precond = "sai"
    return x, rep


@dataclass
class SaiPreconditioner:
    """Sparse approximate inverse ``M ~ C^-1`` on a near-field pattern."""

    M: sp.csr_matrix
    radius: float
    fallback_rows: int = 0

    def apply(self, v):
        return self.M @ v

    @property
    def nnz(self):
        return self.M.nnz


def near_pattern(centroids, radius, blocks=2):
    """Symmetric boolean pattern of RWG pairs within ``radius`` (centroid distance).

    For ``blocks`` current families the pattern is repeated over every block
    pair, so J and M unknowns of nearby RWGs are coupled.
    """
    from scipy.spatial import cKDTree

    c = np.asarray(centroids, float)
    n = len(c)
    pairs = cKDTree(c).query_pairs(radius, output_type="ndarray")
    i = np.concatenate([np.arange(n), pairs[:, 0], pairs[:, 1]])
    j = np.concatenate([np.arange(n), pairs[:, 1], pairs[:, 0]])
    P = sp.coo_matrix((np.ones(len(i), dtype=bool), (i, j)), shape=(n, n)).tocsr()
    if blocks > 1:
        P = sp.kron(np.ones((blocks, blocks), dtype=bool), P, format="csr")
    P.sort_indices()
    return P


def build_sai(C, pattern, radius=float("nan")) -> SaiPreconditioner:
    """Rowwise least-squares ``min ||e_i^T - m_i^T C_nf||`` on ``pattern``.

    ``C_nf`` is ``C`` restricted to the pattern.  Row ``i`` of ``M`` has the
    pattern's row support ``J_i``; the residual is taken over the columns
    reachable from ``J_i`` through the pattern.  Rows whose local matrix is
    rank deficient fall back to ``1 / C_ii``.
    """
    C = np.asarray(C)
    n = C.shape[0]
    P = sp.csr_matrix(pattern)
    if P.shape != (n, n):
        raise ValueError("pattern and C differ in size")
    if not (P.diagonal() != 0).all():
        raise ValueError("SAI pattern must contain the diagonal")
    indptr, indices = P.indptr, P.indices
    rows, cols, vals = [], [], []
    fallback = 0
    for i in range(n):
        J = indices[indptr[i]:indptr[i + 1]]
        I = np.unique(np.concatenate([indices[indptr[j]:indptr[j + 1]] for j in J]))
        # restricted near-field block: zero where (J, I) is outside the pattern
        sub = C[np.ix_(J, I)]
        mask = np.zeros(sub.shape, dtype=bool)
        for a, j in enumerate(J):
            mask[a] = np.isin(I, indices[indptr[j]:indptr[j + 1]], assume_unique=True)
        sub = np.where(mask, sub, 0.0)
        e = (I == i).astype(complex)
        m, _, rank, _ = la.lstsq(sub.T, e, lapack_driver="gelsd")
        if rank < len(J):
            fallback += 1
            rows.append([i]), cols.append([i]), vals.append([1.0 / C[i, i]])
            continue
        rows.append(np.full(len(J), i)), cols.append(J), vals.append(m)
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    return SaiPreconditioner(M, radius, fallback)


def build_sai_for(skeleton, C, r_nf):
    """SAI on the RWG centroid pattern of radius ``r_nf`` (both current families)."""
    V = skeleton.mesh.vertices
    cen = V[skeleton.rwg_edges].mean(axis=1)
    return build_sai(C, near_pattern(cen, r_nf, blocks=2), r_nf)


@dataclass
class HybridSolution:
    lam: np.ndarray
    X: np.ndarray
    E: np.ndarray
    H: np.ndarray
    n_rwg: int
    residual: float

    @property
    def J(self):
        return self.X[: self.n_rwg]

    @property
    def M(self):
        return self.X[self.n_rwg:]


def full_residual(Q, D_LX, D_XL, C, lam, X, b):
    """Relative residual of the unreduced block system."""
    r1 = Q @ lam + D_LX @ X
    r2 = D_XL @ lam + C @ X - b
    return float(np.sqrt(np.linalg.norm(r1) ** 2 + np.linalg.norm(r2) ** 2) / np.linalg.norm(b))


def recover_solution(op: ReducedOperator, hdg, X, b=None) -> HybridSolution:
    """``Lambda = -Q^-1 D_LX X`` and the element fields; optional full residual."""
    from .hdg import recover_fields

    X = np.asarray(X, dtype=complex)
    lam = -op.qf.solve(op.D_LX @ X)
    E, H = recover_fields(hdg, lam)
    res = np.nan
    if b is not None and np.linalg.norm(b) > 0:
        res = full_residual(hdg.Q, op.D_LX, op.D_XL, op.C, lam, X, b)
    elif b is not None:
        res = 0.0
    return HybridSolution(lam, X, E, H, op.n_bi // 2, res)


def block_system(hdg, bi):
    """The unreduced coupled matrix as a dense array (oracle use)."""
    Z = sp.bmat([[hdg.Q, hdg.D_LX], [bi.D_XL, None]], format="csr").toarray()
    n = hdg.n_hdg
    Z[n:, n:] = bi.C
    return Z


def dense_oracle(hdg, bi, b):
    """Direct LAPACK solve of the unreduced system; returns ``(Lambda, X)``."""
    Z = block_system(hdg, bi)
    rhs = np.concatenate([np.zeros(hdg.n_hdg, dtype=complex), b])
    x = la.solve(Z, rhs)
    return x[: hdg.n_hdg], x[hdg.n_hdg:]
