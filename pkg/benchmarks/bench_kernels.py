"""Time the compiled and pure-Python kernel backends on representative sizes.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from demea import kernels, shapes
from demea.edl import bind_skinning
from demea.graph_conv import build_spirals
from demea.hierarchy import build_hierarchy, extract_graph


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    mesh = shapes.ellipsoid_bar()
    graph = extract_graph(mesh, 128)
    h = build_hierarchy(mesh, graph, [506, 128, 32, 8])
    binding = bind_skinning(mesh, graph, 1)
    offsets = mesh.vertices[:, None, :] - graph.node_positions[binding.nodes]
    rot = np.tile(np.eye(3), (8, 128, 1, 1)) + rng.normal(scale=0.1, size=(8, 128, 3, 3))
    trans = rng.normal(size=(8, 128, 3))
    up = rng.normal(size=(8, mesh.n_vertices, 3))
    spirals = build_spirals(mesh).indices
    feats = rng.normal(size=(8, mesh.n_vertices, 16)).astype(np.float32)
    grads = rng.normal(size=(8, mesh.n_vertices, spirals.shape[1], 16)).astype(np.float32)
    torus = shapes.torus(106, 65)
    coarse = h.levels[1].mesh
    return [
        ("max_pairwise_distance 6890", lambda m: kernels.max_pairwise_distance(torus.vertices, impl=m)),
        ("closest_triangle 506->128", lambda m: kernels.closest_triangle(
            mesh.vertices, coarse.vertices, coarse.faces, impl=m)),
        ("edl_forward B=8", lambda m: kernels.edl_forward(
            rot, trans, binding.nodes, binding.weights, offsets, mesh.vertices, impl=m)),
        ("edl_backward B=8", lambda m: kernels.edl_backward(
            up, binding.nodes, binding.weights, offsets, 128, impl=m)),
        ("spiral_gather B=8 F=16", lambda m: kernels.spiral_gather(feats, spirals, impl=m)),
        ("spiral_scatter B=8 F=16", lambda m: kernels.spiral_scatter(grads, spirals, mesh.n_vertices, impl=m)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    names = sorted(backends)
    print(f"{'kernel':28s}" + "".join(f"{n + ' [ms]':>16s}" for n in names) + "   speedup")
    for label, fn in cases():
        ms = {n: 1e3 * best_of(lambda: fn(backends[n]), args.repeat) for n in names}
        speed = f"{ms['python'] / ms['cython']:8.1f}x" if "cython" in ms else "       -"
        print(f"{label:28s}" + "".join(f"{ms[n]:16.3f}" for n in names) + "  " + speed)


if __name__ == "__main__":
    main()
