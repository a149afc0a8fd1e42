"""Acceptance suite: one test per headline criterion, each reporting a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` and read the "acceptance criteria"
section of the terminal summary.
"""
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import sparse
from scipy.spatial.transform import Rotation

from demea import gradcheck, shapes
from demea.autoencoder import MeshAutoencoder, ModelConfig, train
from demea.edl import (EmbeddedDeformation, bind_skinning, procrustes_rotation, ring_rotations,
                       skinning_sigma)
from demea.graph_conv import SpectralOperator, build_spectral, normalized_laplacian, spectral_conv
from demea.hierarchy import (DeformationGraph, build_hierarchy, check_hierarchy, downsample,
                             extract_graph, save_hierarchy, upsample)
from demea.latent import interpolate, smooth, transfer
from demea.mesh import compute_metrics
from demea.synthetic import bar_dataset

SEEDS = 20
# bend and twist range (radians) of the overfit dataset
OVERFIT_AMPLITUDE = 0.15
OVERFIT_STEPS = 2000


def _test_meshes():
    return {
        "icosphere1": shapes.icosphere(1),
        "icosphere2": shapes.icosphere(2),
        "icosphere3": shapes.icosphere(3),
        "torus": shapes.torus(24, 12),
        "grid": shapes.grid(6, 6),
        "box_bar": shapes.box_bar(),
        "ellipsoid_bar": shapes.ellipsoid_bar(),
    }


@pytest.fixture(scope="module")
def rigged():
    """(mesh, graph, binding) for every test mesh, graph at about a quarter of the vertices."""
    out = {}
    for name, mesh in _test_meshes().items():
        graph = extract_graph(mesh, max(8, mesh.n_vertices // 4))
        out[name] = (mesh, graph, bind_skinning(mesh, graph, n_neighbors=6))
    return out


def test_gradient_fidelity(acceptance):
    t0 = time.perf_counter()
    worst = {}
    for scope in gradcheck.SCOPES:
        results = [gradcheck.run_check(scope, seed) for seed in range(SEEDS)]
        worst[scope] = max(results, key=lambda r: r.max_rel_error)
    elapsed = time.perf_counter() - t0
    ok = all(r.passed for r in worst.values()) and elapsed < 120
    detail = ", ".join(f"{s} {r.max_rel_error:.1e}" for s, r in worst.items())
    acceptance("gradient fidelity", ok, f"{SEEDS} seeds/scope, {elapsed:.1f}s; worst: {detail}")
    assert ok


def test_edl_identity(acceptance, rigged):
    worst = 0.0
    for mesh, graph, binding in rigged.values():
        layer = EmbeddedDeformation(mesh, graph, binding)
        zeros = np.zeros((graph.node_count, 3))
        worst = max(worst, float(np.abs(layer.forward(zeros, zeros) - mesh.vertices).max()))
    ok = worst < 1e-12
    acceptance("EDL identity", ok, f"{len(rigged)} meshes, max deviation {worst:.1e}")
    assert ok


def test_edl_rigid_equivariance(acceptance, rigged):
    rng = np.random.default_rng(7)
    worst = 0.0
    for mesh, graph, binding in rigged.values():
        layer = EmbeddedDeformation(mesh, graph, binding)
        for rot in Rotation.random(5, random_state=rng):
            shift = rng.normal(size=3)
            r = rot.as_matrix()
            g = graph.node_positions
            angles = np.tile(rot.as_euler("xyz"), (graph.node_count, 1))
            trans = g @ r.T + shift - g
            out = layer.forward(angles, trans)
            worst = max(worst, float(np.abs(out - (mesh.vertices @ r.T + shift)).max()))
    ok = worst < 1e-9
    acceptance("EDL rigid equivariance", ok, f"max deviation {worst:.1e}")
    assert ok


def test_skinning_partition_and_sigma(acceptance, rigged):
    worst = 0.0
    for mesh, graph, _ in rigged.values():
        for k in (6, 12):
            if graph.node_count >= k:
                b = bind_skinning(mesh, graph, n_neighbors=k)
                worst = max(worst, float(np.abs(b.weights.sum(1) - 1).max()))
    # 3 x 3 grid with diagonal 3, every vertex a node: sigma = (2/3) * 3 / 3
    side = 3 / np.sqrt(2)
    grid = shapes.grid(2, 2, size=(side, side))
    graph = DeformationGraph.from_mesh(grid, np.arange(9), grid.edges)
    b = bind_skinning(grid, graph, n_neighbors=6)
    d_max = compute_metrics(grid).d_max
    sigma_ok = (b.sigma == (2 / 3) * d_max / 3 and skinning_sigma(3.0, 9) == pytest.approx(2 / 3, abs=1e-15)
                and abs(b.sigma - 2 / 3) < 1e-15)
    ok = worst <= 1e-9 and sigma_ok
    acceptance("skinning partition of unity + sigma", ok,
               f"max |sum w - 1| {worst:.1e}, sigma {b.sigma!r}")
    assert ok


def _random_edges(rng, n):
    """k-nearest-neighbor graph over random points, k drawn from 2..5."""
    pts = rng.normal(size=(n, 3))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    k = min(n - 1, int(rng.integers(2, 6)))
    return np.array(sorted({tuple(sorted((i, int(j)))) for i in range(n) for j in np.argsort(d[i])[1:k + 1]}))


def _chebyshev_dense(scaled, x, theta):
    """Reference ``sum_k T_k(L~) x theta_k`` with ``T_k(L~)`` from the eigendecomposition."""
    lam, vec = np.linalg.eigh(scaled)
    angle = np.arccos(np.clip(lam, -1, 1))
    return sum(np.einsum("ij,bjf->bif", (vec * np.cos(k * angle)) @ vec.T, x) @ theta[k]
               for k in range(len(theta)))


def test_chebyshev_oracle(acceptance):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(12):
        n = int(rng.integers(5, 51))
        lap = normalized_laplacian(n, _random_edges(rng, n))
        op = SpectralOperator(sparse.csr_matrix(lap - sparse.identity(n)))
        x = rng.normal(size=(2, n, 3))
        for k in range(1, 7):
            theta = rng.normal(size=(k, 3, 4))
            bias = rng.normal(size=4)
            y, _ = spectral_conv(op, x, theta, bias)
            ref = bias + _chebyshev_dense(op.scaled.toarray(), x, theta)
            worst = max(worst, float(np.abs(y - ref).max()))
    # the operator built from a mesh matches the same oracle
    op = build_spectral(shapes.icosphere(1))
    x = rng.normal(size=(1, op.n_nodes, 2))
    theta = rng.normal(size=(6, 2, 2))
    y, _ = spectral_conv(op, x, theta, np.zeros(2))
    worst = max(worst, float(np.abs(y - _chebyshev_dense(op.scaled.toarray(), x, theta)).max()))
    ok = worst < 1e-10
    acceptance("Chebyshev oracle equivalence", ok, f"K=1..6, n<=50, max deviation {worst:.1e}")
    assert ok


def _build(mesh, graph_nodes, counts):
    return build_hierarchy(mesh, extract_graph(mesh, graph_nodes), counts)


def _artifact_bytes(root):
    return {p.name: p.read_bytes() for p in sorted(Path(root).iterdir())}


def test_hierarchy_invariants(acceptance, tmp_path):
    rng = np.random.default_rng(5)
    cases = [(shapes.icosphere(2), 42, [162, 42, 12]),
             (shapes.icosphere(3), 42, [642, 162, 42, 12]),
             (shapes.ellipsoid_bar(), 128, [506, 128, 32, 8])]
    problems = []
    worst_roundtrip = 0.0
    for i, (mesh, nodes, counts) in enumerate(cases):
        h = _build(mesh, nodes, counts)
        try:
            check_hierarchy(h, tol=1e-6)
        except ValueError as exc:
            problems.append(str(exc))
        for lv in h.levels[1:]:
            f = rng.normal(size=(2, lv.n_vertices, 5))
            worst_roundtrip = max(worst_roundtrip, float(np.abs(downsample(lv, upsample(lv, f)) - f).max()))
        save_hierarchy(h, tmp_path / f"a{i}")
        save_hierarchy(_build(mesh, nodes, counts), tmp_path / f"b{i}")
        if _artifact_bytes(tmp_path / f"a{i}") != _artifact_bytes(tmp_path / f"b{i}"):
            problems.append(f"case {i}: rebuild not byte-identical")
    ok = not problems and worst_roundtrip == 0.0
    acceptance("hierarchy invariants", ok,
               f"{len(cases)} hierarchies, down(up(f)) deviation {worst_roundtrip:.1e}"
               + (f"; {problems}" if problems else ""))
    assert ok


def test_procrustes_recovery(acceptance):
    rng = np.random.default_rng(3)
    worst, worst_det = 0.0, 1.0
    for rot in Rotation.random(200, random_state=rng):
        r = rot.as_matrix()
        ring = rng.normal(size=(int(rng.integers(3, 9)), 3))
        if rng.random() < 0.3:
            ring[:, 2] = 0.0  # planar 1-ring
        moved = ring @ r.T + rng.normal(size=3)
        est, degenerate = procrustes_rotation(ring, moved)
        worst = max(worst, float(np.abs(est - r).max()))
        worst_det = min(worst_det, float(np.linalg.det(est)))
        # a mirrored ring must still give a proper rotation
        mirror, _ = procrustes_rotation(ring, moved * np.array([-1.0, 1.0, 1.0]))
        worst_det = min(worst_det, float(np.linalg.det(mirror)))
    # batched 1-ring solve on a graph
    sphere = shapes.icosphere(2)
    graph = extract_graph(sphere, 42)
    r = Rotation.random(random_state=rng).as_matrix()
    rings = ring_rotations(graph.node_positions, graph.node_positions @ r.T + 0.5, graph.neighbors())
    worst = max(worst, float(np.abs(rings - r).max()))
    worst_det = min(worst_det, float(np.linalg.det(rings).min()))
    ok = worst < 1e-9 and abs(worst_det - 1) < 1e-9
    acceptance("Procrustes recovery", ok, f"max deviation {worst:.1e}, min det {worst_det:.12f}")
    assert ok


@pytest.fixture(scope="module")
def overfit_setup():
    bar = shapes.ellipsoid_bar()
    graph = extract_graph(bar, 128)
    h = build_hierarchy(bar, graph, [506, 128, 32, 8])
    binding = bind_skinning(bar, graph, h.graph_level)
    data = bar_dataset(bar, graph, binding, 10, np.random.default_rng(0), noise=0.0,
                       max_bend=OVERFIT_AMPLITUDE, max_twist=OVERFIT_AMPLITUDE)
    return bar, h, data


@pytest.mark.slow
def test_overfit(acceptance, overfit_setup):
    bar, h, data = overfit_setup
    diag = compute_metrics(bar).bbox_diagonal
    limits = {"EDL": 1e-3, "GL": 5e-3, "LP": 5e-3}
    errors, total = {}, 0.0
    for variant, factor in limits.items():
        cfg = ModelConfig(latent_dim=8, variant=variant, learning_rate=1e-4, batch_size=8)
        model = MeshAutoencoder(h, cfg)
        t0 = time.perf_counter()
        train(model, data, steps=OVERFIT_STEPS)
        total += time.perf_counter() - t0
        errors[variant] = model.mean_vertex_error(data)[0] / diag
    ok = all(errors[v] < f for v, f in limits.items()) and total < 600
    detail = ", ".join(f"{v} {e:.2e} (limit {limits[v]:.0e})" for v, e in errors.items())
    acceptance("overfit training", ok, f"l1 error / diagonal: {detail}; {total:.0f}s")
    assert ok


def test_gl_rigid_consistency(acceptance, overfit_setup):
    bar, h, _ = overfit_setup
    model = MeshAutoencoder(h, ModelConfig(variant="GL"))
    g = model.edl.nodes
    rng = np.random.default_rng(9)
    worst = 0.0
    for rot in Rotation.random(10, random_state=rng):
        r, shift = rot.as_matrix(), rng.normal(size=3)
        offsets = g @ r.T + shift - g  # what a perfect GL decoder would emit
        rotations, translations = model.node_transforms(offsets)
        out = model.edl.deform(rotations, translations)
        worst = max(worst, float(np.abs(out - (bar.vertices @ r.T + shift)).max()))
    ok = worst < 1e-6
    acceptance("GL variant rigid consistency", ok, f"max deviation {worst:.1e}")
    assert ok


def test_latent_algebra(acceptance):
    rng = np.random.default_rng(4)
    eps = np.finfo(np.float32).eps
    ok = True
    worst = 0.0
    for _ in range(50):
        s, t = rng.normal(size=(2, 8)).astype(np.float32)
        ok &= np.array_equal(interpolate(s, t, 0.0), s) and np.array_equal(interpolate(s, t, 1.0), t)
        seq = rng.normal(size=(12, 8)).astype(np.float32)
        out = transfer(seq, t)
        ok &= np.array_equal(out[0], t)
        offset = out - seq
        scale = np.abs(seq).max() + np.abs(t).max()
        worst = max(worst, float(np.abs(offset - offset[0]).max() / scale))
        ok &= np.array_equal(smooth(seq, 1.0), seq)
    ok = bool(ok) and worst <= 4 * eps
    acceptance("latent-ops algebra", ok, f"transfer offset spread {worst:.1e} x scale (f32 eps {eps:.1e})")
    assert ok


def test_checkpoint_roundtrip(acceptance, tmp_path, overfit_setup):
    _, h, data = overfit_setup
    cfg = ModelConfig(latent_dim=8, seed=3)
    model = MeshAutoencoder(h, cfg)
    train(model, data, steps=5)
    model.save(tmp_path / "model.ckpt")
    fresh = MeshAutoencoder(h, ModelConfig(latent_dim=8, seed=99)).load(tmp_path / "model.ckpt")
    z = model.encode(data)
    same_codes = np.array_equal(fresh.encode(data), z)
    same_meshes = np.array_equal(fresh.reconstruct(z), model.reconstruct(z))
    fresh.save(tmp_path / "again.ckpt")
    same_bytes = (tmp_path / "model.ckpt").read_bytes() == (tmp_path / "again.ckpt").read_bytes()
    ok = same_codes and same_meshes and same_bytes
    acceptance("checkpoint round-trip", ok,
               f"codes {same_codes}, reconstructions {same_meshes}, re-saved bytes {same_bytes}")
    assert ok
