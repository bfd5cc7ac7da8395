import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp

from hdgbi import meshgen
from hdgbi.basis import TET_EDGES, tet_gradients
from hdgbi.formulation import Formulation
from hdgbi.hdg import (AssemblyError, assemble_element, assemble_elements, assemble_global, assemble_hdg,
                       dump_matrix_market, recover_fields)
from hdgbi.mesh import FaceClass, build_skeleton

K0 = 2 * np.pi
REF = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


def whitney_mass(X):
    """Analytic Whitney mass matrix from int l_i l_j = V (1 + d_ij) / 20."""
    g, vol = tet_gradients(X)
    Mij = lambda i, j: vol * (1 + (i == j)) / 20
    M = np.zeros((6, 6))
    for p, (a, b) in enumerate(TET_EDGES):
        for q, (c, d) in enumerate(TET_EDGES):
            M[p, q] = (Mij(a, c) * g[b] @ g[d] - Mij(a, d) * g[b] @ g[c]
                       - Mij(b, c) * g[a] @ g[d] + Mij(b, d) * g[a] @ g[c])
    return M


def skel(mesh, pec=()):
    return build_skeleton(mesh, pec, [meshgen.RADIATING_TAG])


def test_e_block_is_scaled_whitney_mass(tet_skeleton):
    A, *_ = assemble_element(tet_skeleton, 0, 1.0, 1.0, K0)
    signs = np.ones(6)  # reference tet vertex ids are increasing
    np.testing.assert_allclose(A[:6, :6], 1j * K0 * whitney_mass(REF) * np.outer(signs, signs), atol=1e-14)


def test_zero_frequency_removes_mass_terms(tet_skeleton):
    A0, *_ = assemble_element(tet_skeleton, 0, 1.0, 1.0, 0.0, eliminate=False)
    np.testing.assert_allclose(A0[:6, :6], 0, atol=1e-15)
    A1, *_ = assemble_element(tet_skeleton, 0, 1.0, 1.0, K0)
    # H block keeps only the face stabilisation
    np.testing.assert_allclose(A0[6:, 6:], A1[6:, 6:] - 1j * K0 * whitney_mass(REF), atol=1e-13)


def test_curl_blocks_are_transposes(two_tet_skeleton):
    b = assemble_elements(two_tet_skeleton, 2.0, 1.5, K0)
    np.testing.assert_allclose(b.A[:, :6, 6:], -np.transpose(b.A[:, 6:, :6], (0, 2, 1)), atol=1e-14)


def test_single_tet_q_matches_dense_elimination(tet_skeleton):
    hdg = assemble_hdg(tet_skeleton, 1.0, 1.0, K0)
    A, F, B, L = (m.toarray() for m in assemble_global(tet_skeleton, 1.0, 1.0, K0))
    Qd = L - B @ np.linalg.inv(A) @ F
    assert hdg.Q.shape == (12, 12)
    np.testing.assert_allclose(hdg.Q.toarray(), Qd, rtol=0, atol=1e-12 * np.abs(Qd).max())


@pytest.mark.parametrize("mesh", [meshgen.two_tets(), meshgen.five_tet_cube(), meshgen.ball_mesh(0.3, 2)])
def test_per_element_equals_global_elimination(mesh):
    sk = skel(mesh)
    assert mesh.n_tet <= 50
    eps = np.linspace(1, 3, mesh.n_tet) - 0.1j
    hdg = assemble_hdg(sk, eps, 1.0, K0)
    A, F, B, L = (m.toarray() for m in assemble_global(sk, eps, 1.0, K0))
    Qd = L - B @ np.linalg.solve(A, F)
    np.testing.assert_allclose(hdg.Q.toarray(), Qd, rtol=0, atol=1e-10 * np.abs(Qd).max())


def test_shared_face_self_term_doubles(two_tet_skeleton):
    sk = two_tet_skeleton
    b = assemble_elements(sk, 1.0, 1.0, K0)
    A, F, B, L = assemble_global(sk, 1.0, 1.0, K0)
    f = int(np.flatnonzero(sk.face_class == FaceClass.INTERIOR)[0])
    dofs = sk.face_dofs([f])[0]
    t0, t1 = sk.face_tets[f]
    k0_, k1_ = sk.face_local[f]
    one = b.L[t0][3 * k0_:3 * k0_ + 3, 3 * k0_:3 * k0_ + 3]
    two = b.L[t1][3 * k1_:3 * k1_ + 3, 3 * k1_:3 * k1_ + 3]
    np.testing.assert_allclose(one, two, atol=1e-15)
    np.testing.assert_allclose(L.toarray()[np.ix_(dofs, dofs)], 2 * one, atol=1e-15)


def test_pec_face_rows_have_no_current_coupling():
    m = meshgen.shell_mesh(0.3, 0.4, 30, 1)
    sk = build_skeleton(m, [meshgen.PEC_TAG], [meshgen.RADIATING_TAG])
    hdg = assemble_hdg(sk, 2.0, 1.0, K0)
    pec = np.flatnonzero(sk.face_class == FaceClass.PEC)
    rows = sk.face_dofs(pec).ravel()
    assert hdg.D_LJ[rows].nnz == 0 and hdg.D_LM[rows].nnz == 0
    assert hdg.D_LJ.nnz > 0
    # only radiating-face rows couple, and those come last
    nz = np.unique(hdg.D_LX.nonzero()[0])
    assert nz.min() >= hdg.n_s


def test_sparsity_certificate(ball_skeleton):
    sk = ball_skeleton
    hdg = assemble_hdg(sk, 2.0, 1.0, K0)
    r, c = hdg.Q.nonzero()
    face_of = lambda d: None
    rank_to_face = np.argsort(sk.hybrid_rank)
    fr, fc = rank_to_face[r // 3], rank_to_face[c // 3]
    share = [bool(set(sk.face_tets[a]) - {-1} & set(sk.face_tets[b]) - {-1}) for a, b in zip(fr, fc)]
    assert all(share)


def test_recover_zero_and_random(tet_skeleton, two_tet_skeleton):
    rng = np.random.default_rng(0)
    hdg = assemble_hdg(tet_skeleton, 1.0, 1.0, K0)
    E, H = recover_fields(hdg, np.zeros(12, dtype=complex))
    assert not E.any() and not H.any()
    lam = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    E, H = recover_fields(hdg, lam)
    b = hdg.blocks
    FL = b.F[0] @ lam[b.dofs[0]]
    res = b.A[0] @ np.concatenate([E[0], H[0]]) + FL
    assert np.linalg.norm(res) <= 1e-12 * np.linalg.norm(FL)
    # two tets: elementwise recovery matches the globally assembled solve
    hdg2 = assemble_hdg(two_tet_skeleton, 1.0, 1.0, K0)
    A, F, _, _ = assemble_global(two_tet_skeleton, 1.0, 1.0, K0)
    lam2 = rng.standard_normal(hdg2.n_hdg) + 0j
    x = -np.linalg.solve(A.toarray(), F @ lam2)
    E2, H2 = recover_fields(hdg2, lam2)
    np.testing.assert_allclose(np.hstack([E2, H2]).ravel(), x, atol=1e-12 * np.abs(x).max())


def test_recover_rejects_wrong_length(tet_skeleton):
    hdg = assemble_hdg(tet_skeleton, 1.0, 1.0, K0)
    with pytest.raises(ValueError):
        recover_fields(hdg, np.zeros(5))


def test_scaling_covariance(ball_skeleton):
    s = 2.5
    m = ball_skeleton.mesh
    m2 = meshgen.make_mesh(s * m.vertices, m.tets, m.tet_tags, m.tris, m.tri_tags)
    sk2 = skel(m2)
    Q1 = assemble_hdg(ball_skeleton, 2.0, 1.5, K0).Q.toarray()
    Q2 = assemble_hdg(sk2, 2.0, 1.5, K0 / s).Q.toarray()
    np.testing.assert_allclose(Q2, Q1, rtol=0, atol=1e-10 * np.abs(Q1).max())


def test_tau_default_and_positive():
    assert Formulation().tau == 1.0
    with pytest.raises(ValueError):
        Formulation(tau=0.0)


def test_singular_element_reported():
    sk = build_skeleton(meshgen.single_tet(), radiating_tags=[meshgen.RADIATING_TAG])
    with pytest.raises(AssemblyError, match="tetrahedron 0"):
        assemble_hdg(sk, np.nan, 1.0, K0)


def test_matrix_market_dump(tmp_path, two_tet_skeleton):
    hdg = assemble_hdg(two_tet_skeleton, 2.0, 1.0, K0)
    p = tmp_path / "q.mtx"
    dump_matrix_market(p, hdg.Q, comment="Q")
    head = p.read_text().splitlines()[0]
    assert "coordinate complex general" in head
    back = sp.csr_matrix(scipy.io.mmread(str(p)))
    np.testing.assert_allclose(back.toarray(), hdg.Q.toarray(), rtol=1e-15)


def test_singular_element_id_in_larger_mesh():
    sk = build_skeleton(meshgen.ball_mesh(0.3, 2), radiating_tags=[meshgen.RADIATING_TAG])
    eps = np.ones(sk.mesh.n_tet, dtype=complex)
    eps[17] = np.nan
    with pytest.raises(AssemblyError, match="tetrahedron 17"):
        assemble_hdg(sk, eps, 1.0, K0, chunk=8)
