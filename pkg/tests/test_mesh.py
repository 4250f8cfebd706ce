import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import perturbed_mesh
from fve2l import refelem
from fve2l.mesh import (DofMap, Mesh, MeshError, average_size, build_structured, dual_topology,
                        mesh_size, min_angle, read_mesh, write_mesh)


@pytest.mark.parametrize("n", (1, 3, 8))
def test_structured_counts(n):
    m = build_structured(n)
    assert m.n_vertices == (n + 1) ** 2
    assert m.n_triangles == 2 * n * n
    assert len(m.edges) == 3 * n * n + 2 * n
    assert len(m.boundary_edges) == 4 * n
    assert len(m.boundary_vertices) == 4 * n
    assert np.all(m.affine.det > 0)
    assert m.areas.sum() == pytest.approx(1.0)


def test_structured_geometry():
    m = build_structured(4, ((-1.0, 1.0), (-1.0, 1.0)))
    assert min_angle(m) == pytest.approx(45.0)
    assert mesh_size(m) == pytest.approx(np.sqrt(2) / 2)
    assert average_size(m) == pytest.approx(1 / np.sqrt(32))
    np.testing.assert_allclose(m.angles().sum(axis=1), 180.0)


def test_affine_map():
    m = build_structured(2)
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(m.affine(ref), m.vertices[m.triangles])
    np.testing.assert_allclose(np.einsum("tij,tjk->tik", m.affine.B, m.affine.inv),
                               np.broadcast_to(np.eye(2), (8, 2, 2)), atol=1e-14)


def test_validation_errors():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(MeshError):
        Mesh(v, [[0, 2, 1]])
    with pytest.raises(MeshError):
        Mesh(v, [[0, 1, 3]])
    with pytest.raises(MeshError):
        Mesh(v, [[0, 1, 2]], markers=[0, 0, 0])
    with pytest.raises(MeshError):
        build_structured(0)


@pytest.mark.parametrize("k", refelem.SUPPORTED_ORDERS)
def test_dofmap(k):
    m = build_structured(3)
    d = DofMap(m, k)
    bubbles = m.n_triangles if k == 2 else 0
    assert d.n_nodes == (3 * k + 1) ** 2 + bubbles
    assert len(np.unique(d.local_to_global)) == d.n_nodes
    assert len(d.boundary_nodes) == 4 * 3 * k
    # shared nodes have one position, consistent across triangles
    xy = m.affine(refelem.node_coordinates(k).as_array())
    np.testing.assert_allclose(d.coordinates[d.local_to_global], xy, atol=1e-14)
    b = d.coordinates[d.boundary_nodes]
    on = np.isclose(b, 0).any(axis=1) | np.isclose(b, 1).any(axis=1)
    assert on.all()


def test_dual_topology_areas():
    m = perturbed_mesh(5, seed=3)
    dt = dual_topology(m)
    # each barycentric piece is a third of its triangle
    np.testing.assert_allclose(dt.piece_areas(), np.repeat(m.areas[:, None] / 3, 3, axis=1), rtol=1e-13)
    assert dt.first_layer_areas().sum() == pytest.approx(m.areas.sum())
    assert dt.n_first_layer == m.n_vertices and dt.n_second_layer == m.n_triangles


def test_dual_normals_point_into_next_region():
    m = perturbed_mesh(3, seed=1)
    dt = dual_topology(m)
    np.testing.assert_allclose(np.linalg.norm(dt.segment_normals, axis=-1), 1.0)
    v = m.vertices[m.triangles]
    for s in range(3):
        mid = dt.segments[:, s].mean(axis=1)
        # region s+2 is the piece of local vertex s+1
        toward = v[:, (s + 1) % 3] - mid
        assert np.all(np.einsum("ti,ti->t", dt.segment_normals[:, s], toward) > 0)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 5), amp=st.floats(0.0, 0.3), seed=st.integers(0, 1000))
def test_mesh_roundtrip_bit_exact(tmp_path_factory, n, amp, seed):
    m = perturbed_mesh(n, amp, seed, domain=((-0.3, 1.7), (2.0, 3.1)))
    path = tmp_path_factory.mktemp("mesh") / "m.txt"
    write_mesh(m, path)
    back = read_mesh(path)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.markers, m.markers)


def test_read_mesh_format(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("3 1\n0 0 1\n1 0 1\n0 1 1\n0 1 2\n")
    m = read_mesh(p)
    assert m.n_triangles == 1 and m.areas[0] == 0.5
    p.write_text("3 1\n0 0 1\n1 0 1\n")
    with pytest.raises(MeshError):
        read_mesh(p)
