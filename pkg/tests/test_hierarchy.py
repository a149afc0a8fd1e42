import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from demea import kernels, shapes
from demea.hierarchy import (HierarchyError, _quadrics, _up_weights, build_hierarchy,
                             check_hierarchy, downsample, downsample_backward, extract_graph,
                             greedy_assign, load_hierarchy, save_hierarchy, simplify, upsample,
                             upsample_backward)
from demea.mesh import Mesh


def vertex_set(mesh):
    return {tuple(v) for v in mesh.vertices.tolist()}


def test_graph_nodes_are_mesh_vertices(sphere):
    g = extract_graph(sphere, 42)
    assert g.node_count == 42
    assert len(set(g.node_to_vertex.tolist())) == 42
    verts = vertex_set(sphere)
    assert all(tuple(p) in verts for p in g.node_positions.tolist())
    np.testing.assert_array_equal(g.node_positions, sphere.vertices[g.node_to_vertex])


def test_graph_target_bounds():
    m = shapes.icosphere(1)
    with pytest.raises(HierarchyError):
        extract_graph(m, m.n_vertices)
    with pytest.raises(HierarchyError):
        extract_graph(m, 3)
    g = extract_graph(m, m.n_vertices - 1)
    assert g.node_count == m.n_vertices - 1
    verts = vertex_set(m)
    assert all(tuple(p) in verts for p in g.node_positions.tolist())


def test_greedy_assign_order_and_injectivity():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [5, 0, 0]])
    # both points want vertex 0; the first one in order wins
    out = greedy_assign(np.array([[0.1, 0, 0], [0.0, 0, 0]]), verts)
    assert out.tolist() == [0, 1]


@pytest.mark.slow
def test_body_scale_configuration():
    mesh = shapes.torus(106, 65)
    assert mesh.n_vertices == 6890
    g = extract_graph(mesh, 431)
    assert g.node_count == 431
    h = build_hierarchy(mesh, g, [6890, 1723, 431, 108, 27])
    assert h.level_counts == [6890, 1723, 431, 108, 27]
    assert h.graph_level == 2
    check_hierarchy(h)


def test_single_level_identity(sphere, rng):
    h = build_hierarchy(sphere, None, [sphere.n_vertices])
    assert h.graph_level is None
    x = rng.normal(size=(sphere.n_vertices, 4))
    lv = h.levels[0]
    np.testing.assert_array_equal(downsample(lv, x), x)
    np.testing.assert_array_equal(upsample(lv, x), x)


def test_subset_property(bar_hierarchy):
    h = bar_hierarchy
    for k in range(1, len(h.levels)):
        fine, coarse = h.levels[k - 1], h.levels[k]
        assert vertex_set(coarse.mesh) <= vertex_set(fine.mesh)
        assert set(coarse.mesh_indices.tolist()) <= set(fine.mesh_indices.tolist())
        np.testing.assert_array_equal(fine.mesh.vertices[coarse.select_indices], coarse.mesh.vertices)
    check_hierarchy(h)


def test_graph_level_matches_graph(bar_hierarchy):
    h = bar_hierarchy
    lv = h.levels[h.graph_level]
    np.testing.assert_array_equal(lv.mesh_indices, h.graph.node_to_vertex)
    np.testing.assert_array_equal(lv.mesh.faces, h.graph.faces)
    for k in range(h.graph_level + 1):
        assert set(h.graph.node_to_vertex.tolist()) <= set(h.levels[k].mesh_indices.tolist())


def test_bad_level_counts(sphere):
    g = extract_graph(sphere, 42)
    with pytest.raises(HierarchyError):
        build_hierarchy(sphere, g, [162, 42, 42])
    with pytest.raises(HierarchyError):
        build_hierarchy(sphere, g, [160, 42, 12])
    with pytest.raises(HierarchyError):
        build_hierarchy(sphere, g, [162, 80, 20])  # graph size is not a level


def test_downsample_gather_oracle(sphere_hierarchy, rng):
    lv = sphere_hierarchy.levels[1]
    x = rng.normal(size=(2, lv.n_finer, 3))
    y = downsample(lv, x)
    for j, i in enumerate(lv.select_indices):
        np.testing.assert_array_equal(y[:, j], x[:, i])
    onehot = np.zeros((lv.n_finer, 1))
    i = lv.select_indices[5]
    onehot[i] = 1
    assert np.flatnonzero(downsample(lv, onehot)[:, 0]).tolist() == [5]


def test_upsample_survivors_pass_through(sphere_hierarchy, rng):
    lv = sphere_hierarchy.levels[1]
    x = rng.normal(size=(lv.n_vertices, 3))
    up = upsample(lv, x)
    np.testing.assert_array_equal(up[lv.select_indices], x)


def test_upsample_centroid_case():
    coarse = Mesh([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    fine = Mesh(np.vstack([coarse.vertices, [[1 / 3, 1 / 3, 0]]]), [[0, 1, 3], [1, 2, 3], [2, 0, 3]])
    idx, w = _up_weights(fine, coarse, np.array([0, 1, 2]))
    assert sorted(idx[3].tolist()) == [0, 1, 2]
    np.testing.assert_allclose(w[3], 1 / 3, atol=1e-7)


def test_up_weights_hit_closest_point(sphere_hierarchy):
    # reconstructed point is no farther than any densely sampled point of the coarse surface
    lv = sphere_hierarchy.levels[2]
    fine = sphere_hierarchy.levels[1].mesh
    cv, cf = lv.mesh.vertices, lv.mesh.faces
    s = np.linspace(0, 1, 25)
    u, v = np.meshgrid(s, s)
    keep = (u + v) <= 1
    u, v = u[keep], v[keep]
    samples = np.concatenate([cv[a] * (1 - u - v)[:, None] + cv[b] * u[:, None] + cv[c] * v[:, None]
                              for a, b, c in cf])
    for i, row in enumerate(lv.up_rows()):
        p = fine.vertices[i]
        q = sum(w * cv[j] for j, w in row)
        best = np.sqrt(((samples - p) ** 2).sum(1)).min()
        assert np.linalg.norm(p - q) <= best + 1e-6


@pytest.mark.parametrize("name", ["sphere_hierarchy", "bar_hierarchy"])
def test_partition_of_unity_and_down_up(name, request, rng):
    h = request.getfixturevalue(name)
    for lv in h.levels[1:]:
        assert np.abs(lv.up_weight.sum(1) - 1).max() <= 1e-6
        c = upsample(lv, np.full((lv.n_vertices, 2), 3.5))
        np.testing.assert_allclose(c, 3.5, rtol=1e-6)
        x = rng.normal(size=(3, lv.n_vertices, 4))
        np.testing.assert_array_equal(downsample(lv, upsample(lv, x)), x)


def test_sampling_adjoints(bar_hierarchy, rng):
    lv = bar_hierarchy.levels[2]
    xf = rng.normal(size=(2, lv.n_finer, 3))
    xc = rng.normal(size=(2, lv.n_vertices, 3))
    assert np.sum(downsample(lv, xf) * xc) == pytest.approx(np.sum(xf * downsample_backward(lv, xc)))
    assert np.sum(upsample(lv, xc) * xf) == pytest.approx(np.sum(xc * upsample_backward(lv, xf)))


def test_quadric_vanishes_on_face_planes(sphere):
    q = _quadrics(sphere.vertices, sphere.faces)
    p = np.c_[sphere.vertices, np.ones(sphere.n_vertices)]
    err = np.einsum("ni,nij,nj->n", p, q, p)
    assert np.abs(err).max() < 1e-12
    # moving a vertex along its normal costs sum(area * dist^2) over incident planes
    off = p[0] * np.array([1.1, 1.1, 1.1, 1.0])
    assert off @ q[0] @ off > 0


def test_simplify_keeps_protected_and_subset(sphere):
    protected = [0, 5, 17, 100]
    kept, pos, faces, _ = simplify(sphere.vertices, sphere.faces, 30, protected)
    assert len(kept) == 30
    assert set(protected) <= set(kept.tolist())
    np.testing.assert_array_equal(pos, sphere.vertices[kept])


def test_deterministic_artifacts(tmp_path, sphere):
    from demea.autoencoder import build_supports

    paths = []
    for i in range(2):
        g = extract_graph(sphere, 42)
        h = build_hierarchy(sphere, g, [162, 42, 12])
        sup = build_supports(h, "spiral")
        for k, s in build_supports(h, "spectral").items():
            sup[k].update(s)
        out = tmp_path / f"run{i}"
        save_hierarchy(h, out, sup)
        paths.append(out)
    files = sorted(p.name for p in paths[0].iterdir())
    assert files == sorted(p.name for p in paths[1].iterdir())
    for name in files:
        assert (paths[0] / name).read_bytes() == (paths[1] / name).read_bytes(), name


def test_save_load_roundtrip(tmp_path, bar_hierarchy):
    save_hierarchy(bar_hierarchy, tmp_path)
    h, supports = load_hierarchy(tmp_path)
    assert h.level_counts == bar_hierarchy.level_counts
    assert h.graph_level == bar_hierarchy.graph_level
    np.testing.assert_array_equal(h.graph.node_positions, bar_hierarchy.graph.node_positions)
    for a, b in zip(h.levels, bar_hierarchy.levels):
        np.testing.assert_array_equal(a.mesh.vertices, b.mesh.vertices)
        np.testing.assert_array_equal(a.up_index, b.up_index)
        np.testing.assert_array_equal(a.up_weight, b.up_weight.astype(np.float32))
    assert supports[0] == {}


@settings(max_examples=8, deadline=None)
@given(st.integers(20, 41), st.integers(6, 19))
def test_random_hierarchies_hold_invariants(mid, coarse):
    mesh = shapes.icosphere(1)
    g = extract_graph(mesh, mid)
    h = build_hierarchy(mesh, g, [42, mid, coarse])
    check_hierarchy(h)
    assert h.level_counts == [42, mid, coarse]


def test_closest_triangle_against_dense_projection(rng):
    verts = rng.normal(size=(6, 3))
    faces = np.array([[0, 1, 2], [1, 3, 2], [3, 4, 5]])
    pts = rng.normal(size=(40, 3)) * 2
    fidx, bary = kernels.closest_triangle(pts, verts, faces)
    s = np.linspace(0, 1, 201)
    u, v = np.meshgrid(s, s)
    keep = (u + v) <= 1
    u, v = u[keep], v[keep]
    for p, f, b in zip(pts, fidx, bary):
        assert b.min() >= -1e-12 and b.sum() == pytest.approx(1)
        q = b @ verts[faces[f]]
        best = min(np.sqrt((((verts[a] * (1 - u - v)[:, None] + verts[bb] * u[:, None]
                               + verts[c] * v[:, None]) - p) ** 2).sum(1)).min()
                   for a, bb, c in faces)
        assert np.linalg.norm(q - p) <= best + 1e-9
