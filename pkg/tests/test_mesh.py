import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from cortexprint.mesh import (
    MeshError,
    TriMesh,
    boundary_loops,
    cotangent_laplacian,
    grid_mesh,
    icosphere,
    inflate_surface,
    load_mesh,
    mean_curvature,
    mesh_topology,
    project_to_sphere,
    rotation_matrix,
    save_mesh,
)


def test_icosphere_counts_and_topology():
    s = icosphere(4)
    assert s.n_vertices == 2562
    assert s.n_faces == 5120
    rep = mesh_topology(s)
    assert rep.is_sphere and rep.genus == 0 and rep.n_boundary_loops == 0


def test_grid_is_disk():
    g = grid_mesh(5, 4)
    rep = mesh_topology(g)
    assert rep.is_disk
    assert rep.euler_characteristic == 1
    loops = boundary_loops(g.faces)
    assert len(loops) == 1 and len(loops[0]) == 2 * (5 + 4)  # nx, ny count cells


def test_face_index_out_of_range():
    with pytest.raises(MeshError, match="out of range"):
        TriMesh(np.zeros((3, 3)), [[0, 1, 3]])


def test_repeated_vertex_rejected():
    with pytest.raises(MeshError, match="repeats"):
        TriMesh(np.eye(3), [[0, 1, 1]])


def test_feature_count_mismatch():
    with pytest.raises(MeshError, match="mismatch"):
        TriMesh(np.eye(3), [[0, 1, 2]], {"curvature": np.zeros(2)})


def test_non_manifold_edge():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]], float)
    f = [[0, 1, 2], [1, 0, 3], [0, 1, 4]]
    with pytest.raises(MeshError, match="non-manifold"):
        mesh_topology(TriMesh(v, f))


def test_zero_area_face_rejected():
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float)
    with pytest.raises(MeshError, match="zero-area"):
        TriMesh(v, [[0, 1, 2]]).validate()


def test_obj_roundtrip(tmp_path):
    s = icosphere(1)
    s.features = {"thickness": np.arange(s.n_vertices, dtype=float) / 7,
                  "curvature": np.ones(s.n_vertices), "sulc": -np.ones(s.n_vertices)}
    save_mesh(s, tmp_path / "m.obj", tmp_path / "m.csv")
    back = load_mesh(tmp_path / "m.obj", tmp_path / "m.csv")
    assert np.array_equal(back.vertices, s.vertices)
    assert np.array_equal(back.faces, s.faces)
    for k in s.features:
        assert np.array_equal(back.features[k], s.features[k])


def test_obj_rejects_quads(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(MeshError, match="non-triangular"):
        load_mesh(p)


def test_feature_sidecar_row_mismatch(tmp_path):
    s = icosphere(0)
    save_mesh(s, tmp_path / "m.obj")
    (tmp_path / "f.csv").write_text("vertex,thickness,curvature,sulc\n0,1,2,3\n")
    with pytest.raises(MeshError, match="feature/vertex count mismatch"):
        load_mesh(tmp_path / "m.obj", tmp_path / "f.csv")


def test_cotangent_laplacian_structure():
    s = icosphere(2)
    L = cotangent_laplacian(s)
    assert abs(L - L.T).max() < 1e-14
    assert np.abs(np.asarray(L.sum(axis=1))).max() < 1e-12
    w = np.linalg.eigvalsh(L.toarray())
    assert w.min() > -1e-10


def test_cotangent_laplacian_equilateral_weights():
    # two equilateral triangles: every interior angle is 60 degrees
    h = np.sqrt(3) / 2
    v = np.array([[0, 0, 0], [1, 0, 0], [0.5, h, 0], [0.5, -h, 0]])
    L = cotangent_laplacian(TriMesh(v, [[0, 1, 2], [1, 0, 3]]))
    cot60 = 1 / np.sqrt(3)
    assert L[0, 1] == pytest.approx(-(cot60 + cot60) / 2, abs=1e-14)
    assert L[0, 2] == pytest.approx(-cot60 / 2, abs=1e-14)


def test_laplacian_annihilates_linear_functions_on_flat_interior():
    g = grid_mesh(6, 6)
    L = cotangent_laplacian(g)
    lin = 2.0 * g.vertices[:, 0] - 3.0 * g.vertices[:, 1]
    r = L @ lin
    interior = np.ones(g.n_vertices, bool)
    interior[np.concatenate(boundary_loops(g.faces))] = False
    assert np.abs(r[interior]).max() < 1e-12


@pytest.mark.parametrize("radius", [1.0, 2.5])
def test_sphere_mean_curvature(radius):
    s = icosphere(4, radius)
    h = mean_curvature(s)
    assert np.abs(h - 1.0 / radius).max() < 1e-4 / radius


def test_mean_curvature_of_plane_is_zero():
    g = grid_mesh(5, 5)
    assert np.abs(mean_curvature(g)).max() == 0.0


def test_inflation_of_sphere_has_no_depth():
    _, depth = inflate_surface(icosphere(4))
    assert np.abs(depth).max() < 1e-3


def test_inflation_zero_iterations():
    s = icosphere(2)
    out, depth = inflate_surface(s, n_iters=0)
    assert np.array_equal(out.vertices, s.vertices)
    assert not depth.any()


def test_inflation_separates_dimple():
    s = icosphere(4)
    d = np.array([0.0, 0.0, 1.0])
    ang = np.arccos(np.clip(s.vertices @ d, -1, 1))
    r = 1.0 - 0.15 * np.exp(-ang ** 2 / (2 * 0.25 ** 2))
    dimpled = s.copy(vertices=s.vertices * r[:, None])
    _, depth = inflate_surface(dimpled)
    inside = ang < 0.15
    far = ang > 1.5
    # the pit moves outward during inflation: positive depth
    assert depth[inside].mean() > 0
    assert depth[inside].mean() > depth[far].mean() + 0.02


def test_project_to_sphere_unit_norm():
    s = icosphere(2, 3.0)
    p = project_to_sphere(s)
    assert np.allclose(np.linalg.norm(p.vertices, axis=1), 1.0, atol=1e-14)


def test_project_to_sphere_rejects_non_star_shaped():
    s = icosphere(2)
    v = s.vertices.copy()
    v[0] = -3 * v[0]  # pull one vertex through the center
    with pytest.raises(MeshError, match="star-shaped"):
        project_to_sphere(s.copy(vertices=v))


@settings(max_examples=25, deadline=None)
@given(st.floats(-np.pi, np.pi), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_rotation_matrix_is_orthonormal(angle, axis):
    if np.linalg.norm(axis) < 1e-3:
        axis = [0.0, 0.0, 1.0]
    R = rotation_matrix(axis, angle)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 5.0))
def test_laplacian_is_scale_invariant(scale):
    s = icosphere(1)
    a = cotangent_laplacian(s)
    b = cotangent_laplacian(s.copy(vertices=s.vertices * scale))
    assert sparse.linalg.norm(a - b) < 1e-10
