import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdgbi import meshgen
from hdgbi.mesh import (FaceClass, MeshError, build_skeleton, count_dofs, load_mesh, make_mesh,
                        write_mesh, MaterialMap)

REF_TET = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


def _write(tmp_path, text, name="m.msh"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _msh(nodes, elements):
    lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(len(nodes))]
    lines += [f"{i + 1} {x} {y} {z}" for i, (x, y, z) in enumerate(nodes)]
    lines += ["$EndNodes", "$Elements", str(len(elements))]
    lines += [f"{i + 1} " + " ".join(map(str, e)) for i, e in enumerate(elements)]
    lines += ["$EndElements"]
    return "\n".join(lines) + "\n"


def test_load_reference_tet(tmp_path):
    p = _write(tmp_path, _msh(REF_TET, [(4, 2, 1, 1, 1, 2, 3, 4)]))
    m = load_mesh(p)
    assert m.n_tet == 1
    assert m.volumes()[0] == pytest.approx(1 / 6, rel=1e-14)


def test_flipped_tet_is_reoriented(tmp_path):
    p = _write(tmp_path, _msh(REF_TET, [(4, 2, 1, 1, 2, 1, 3, 4)]))
    m = load_mesh(p)
    assert m.volumes()[0] == pytest.approx(1 / 6, rel=1e-14)


def test_five_tet_cube_volume():
    m = meshgen.five_tet_cube()
    assert m.n_tet == 5
    assert m.volumes().sum() == pytest.approx(1.0, rel=1e-13)


def test_parse_error_reports_line(tmp_path):
    text = _msh(REF_TET, [(4, 2, 1, 1, 1, 2, 3, 4)]).replace("2 1.0 0.0 0.0", "2 1.0 zero 0.0")
    with pytest.raises(MeshError, match=r"m\.msh:7: malformed node"):
        load_mesh(_write(tmp_path, text))


def test_unsupported_element_type(tmp_path):
    with pytest.raises(MeshError, match="unsupported element type 5"):
        load_mesh(_write(tmp_path, _msh(REF_TET, [(5, 2, 1, 1, 1, 2, 3, 4)])))


def test_degenerate_tet_is_reported(tmp_path):
    nodes = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0.5, 0.5, 0.0)]
    with pytest.raises(MeshError, match="degenerate"):
        load_mesh(_write(tmp_path, _msh(nodes, [(4, 2, 1, 1, 1, 2, 3, 4)])))


def test_missing_file():
    with pytest.raises(MeshError, match="not found"):
        load_mesh("/nonexistent/mesh.msh")


def test_unknown_section_warns(tmp_path):
    text = _msh(REF_TET, [(4, 2, 1, 1, 1, 2, 3, 4)]) + "$Comments\nhello\n$EndComments\n"
    with pytest.warns(UserWarning, match="Comments"):
        load_mesh(_write(tmp_path, text))


def test_face_shared_by_three_tets_rejected():
    V = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, -1], [1, 1, 1]])
    m = make_mesh(V, [[0, 1, 2, 3], [0, 1, 2, 4], [0, 1, 2, 5]])
    with pytest.raises(MeshError, match="more than two"):
        build_skeleton(m)


def test_single_tet_skeleton(tet_skeleton):
    sk = tet_skeleton
    assert sk.count(FaceClass.INTERIOR) == 0
    assert sk.count(FaceClass.RADIATING) == 4
    assert sk.n_rwg == 6
    c = count_dofs(sk)
    assert (c.n_hdg, c.n_bi, c.n_dg) == (12, 12, 12)


def test_two_tet_skeleton(two_tet_skeleton):
    sk = two_tet_skeleton
    assert sk.count(FaceClass.INTERIOR) == 1
    assert sk.count(FaceClass.RADIATING) == 6
    # brute force: edges of the six boundary triangles, each shared by two of them
    tris = sk.faces[sk.face_class == FaceClass.RADIATING]
    edges = {tuple(sorted((t[i], t[j]))) for t in tris for i, j in ((0, 1), (0, 2), (1, 2))}
    assert sk.n_rwg == len(edges) == 9
    c = count_dofs(sk)
    assert (c.n_hdg, c.n_bi, c.n_dg) == (21, 18, 24)


def test_mixed_pec_radiating_two_tets():
    # the shell of the second tet is PEC; the other three boundary faces radiate
    m = meshgen.two_tets(lambda c: meshgen.PEC_TAG if c[2] < 0 else meshgen.RADIATING_TAG)
    sk = build_skeleton(m, pec_tags=[meshgen.PEC_TAG], radiating_tags=[meshgen.RADIATING_TAG])
    counts = sorted([sk.count(FaceClass.INTERIOR), sk.count(FaceClass.RADIATING), sk.count(FaceClass.PEC)])
    assert counts == [1, 3, 3]
    rad = set(np.flatnonzero(sk.face_class == FaceClass.RADIATING).tolist())
    for g in sk.rwg_faces:
        f = sk.gamma_faces[g]
        assert set(f.tolist()) <= rad
        assert len(set(sk.faces[f[0]]) & set(sk.faces[f[1]])) == 2
    assert not sk.closed


def test_tag_used_twice_rejected():
    with pytest.raises(MeshError, match="both"):
        build_skeleton(meshgen.single_tet(), pec_tags=[12], radiating_tags=[12])


def test_untagged_boundary_face_rejected():
    with pytest.raises(MeshError, match="untagged"):
        build_skeleton(meshgen.single_tet(), pec_tags=[meshgen.PEC_TAG], radiating_tags=[99])


def test_rwg_edges_sorted(ball_skeleton):
    e = ball_skeleton.rwg_edges
    assert (e[:, 0] < e[:, 1]).all()
    keys = e[:, 0] * (e.max() + 1) + e[:, 1]
    assert (np.diff(keys) > 0).all()


def test_1366_tet_mesh_dof_row():
    m = meshgen.trimmed_box((4, 3, 19), drop=2)
    sk = build_skeleton(m, radiating_tags=[meshgen.RADIATING_TAG])
    c = count_dofs(sk)
    assert c.n_tet == 1366
    assert c.n_dg == 16392


@pytest.mark.parametrize("mesh", [meshgen.ball_mesh(0.2, 2), meshgen.shell_mesh(0.3, 0.4, 60, 2),
                                  meshgen.box_mesh((1, 2, 0.5), (3, 2, 2)), meshgen.trimmed_box((2, 2, 3), 1)])
def test_partition_and_euler_identities(mesh):
    tags = np.unique(mesh.tri_tags).tolist()
    pec = [meshgen.PEC_TAG] if meshgen.PEC_TAG in tags else []
    sk = build_skeleton(mesh, pec, [meshgen.RADIATING_TAG])
    ni, nr_, npec = (sk.count(c) for c in (FaceClass.INTERIOR, FaceClass.RADIATING, FaceClass.PEC))
    assert ni + nr_ + npec == sk.n_face
    assert 2 * ni + nr_ + npec == 4 * mesh.n_tet
    assert 2 * sk.n_rwg == 3 * nr_
    c = count_dofs(sk)
    assert c.n_dg == 12 * c.n_tet and c.n_hdg == 3 * c.n_face and c.n_bi == 2 * c.n_rwg
    # hybrid ordering: non-radiating faces first
    rank = sk.hybrid_rank
    assert rank[sk.face_class == FaceClass.RADIATING].min() >= ni + npec


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_box_counts_property(nx, ny, nz):
    m = meshgen.box_mesh((1.0, 1.0, 1.0), (nx, ny, nz))
    sk = build_skeleton(m, radiating_tags=[meshgen.RADIATING_TAG])
    assert m.n_tet == 6 * nx * ny * nz
    assert 2 * sk.n_rwg == 3 * sk.count(FaceClass.RADIATING)
    assert sk.closed


def test_round_trip(tmp_path):
    m = meshgen.shell_mesh(0.3, 0.4, 40, 1)
    p = tmp_path / "shell.msh"
    write_mesh(m, p)
    m2 = load_mesh(p)
    np.testing.assert_array_equal(m.tets, m2.tets)
    np.testing.assert_array_equal(m.tris, m2.tris)
    np.testing.assert_array_equal(m.vertices, m2.vertices)
    a = build_skeleton(m, [meshgen.PEC_TAG], [meshgen.RADIATING_TAG])
    b = build_skeleton(m2, [meshgen.PEC_TAG], [meshgen.RADIATING_TAG])
    np.testing.assert_array_equal(a.faces, b.faces)
    np.testing.assert_array_equal(a.rwg_edges, b.rwg_edges)


def test_material_map():
    m = meshgen.single_tet()
    eps, mu = MaterialMap.uniform([1], 2 - 0.1j).per_tet(m)
    assert eps[0] == 2 - 0.1j and mu[0] == 1
    with pytest.raises(MeshError, match="active"):
        MaterialMap({1: (2 + 0.1j, 1.0)})
    with pytest.raises(MeshError, match="no material"):
        MaterialMap.uniform([7]).per_tet(m)
