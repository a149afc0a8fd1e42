"""Central finite-difference checks of the analytic backward passes.

Each check builds a small random problem from a seed, evaluates a scalar
objective ``sum(r * f(x))`` with a fixed random ``r`` (or the loss itself),
and compares the analytic gradient against central differences in float64.
The reported error is ``max|analytic - numeric| / max(max|numeric|, tiny)``.
"""
from dataclasses import dataclass

import numpy as np

from . import nn, shapes
from .autoencoder import MeshAutoencoder, ModelConfig
from .edl import EmbeddedDeformation, bind_skinning
from .graph_conv import build_spectral, build_spirals, spectral_conv, spectral_conv_backward
from .graph_conv import spiral_conv, spiral_conv_backward
from .hierarchy import DeformationGraph, build_hierarchy, extract_graph
from .mesh import Mesh

STEP = 1e-5
TOLERANCES = {"edl": 1e-4, "spiral": 1e-4, "spectral": 1e-4, "fc": 1e-4, "elu": 1e-4,
              "loss": 1e-4, "end2end": 1e-3}
SCOPES = tuple(TOLERANCES)


@dataclass
class CheckResult:
    scope: str
    seed: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self):
        return bool(self.max_rel_error < self.tolerance)


def numeric_gradient(f, x, h=STEP):
    """Central differences of scalar ``f`` w.r.t. every entry of float64 array ``x`` (in place)."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic, numeric):
    a = np.concatenate([np.ravel(v) for v in analytic])
    n = np.concatenate([np.ravel(v) for v in numeric])
    scale = max(np.abs(n).max(), np.abs(a).max(), 1e-12)
    return float(np.abs(a - n).max() / scale)


def _fault(grads, fault):
    # negative control: perturb one analytic entry by 1% of the gradient scale
    if fault:
        g = grads[0]
        g.reshape(-1)[0] += 0.01 * max(np.abs(g).max(), 1.0)
    return grads


def random_patch_mesh(rng, n=20):
    """Jittered planar grid with ``n`` vertices (n must factor as 4 x k or 5 x k)."""
    nx = 5 if n % 5 == 0 else 4
    m = shapes.grid(nx - 1, n // nx - 1)
    v = m.vertices + np.c_[rng.normal(scale=0.02, size=(n, 2)), rng.normal(scale=0.1, size=n)]
    return Mesh(v, m.faces)


def check_edl(rng, fault=False):
    mesh = random_patch_mesh(rng, 20)
    node_idx = np.sort(rng.choice(20, size=4, replace=False))
    graph = DeformationGraph.from_mesh(mesh, node_idx, edges=np.array([[0, 1], [1, 2], [2, 3]]),
                                       faces=np.zeros((0, 3), dtype=np.int64))
    binding = bind_skinning(mesh, graph, n_neighbors=3)
    layer = EmbeddedDeformation(mesh, graph, binding)
    ang = rng.normal(scale=0.5, size=(2, 4, 3))
    tr = rng.normal(scale=0.1, size=(2, 4, 3))
    r = rng.normal(size=(2, 20, 3))
    layer.forward(ang, tr)
    grads = _fault(list(layer.backward(r)), fault)
    f = lambda: float((layer.forward(ang, tr) * r).sum())
    return relative_error(grads, [numeric_gradient(f, ang), numeric_gradient(f, tr)])


def check_spiral(rng, fault=False):
    mesh = shapes.icosphere(1)
    sup = build_spirals(mesh, 10)
    x = rng.normal(size=(2, mesh.n_vertices, 3))
    w = rng.normal(size=(10, 4, 3))
    b = rng.normal(size=4)
    r = rng.normal(size=(2, mesh.n_vertices, 4))
    _, gath = spiral_conv(sup, x, w, b)
    grads = _fault(list(spiral_conv_backward(sup, gath, w, r)), fault)
    f = lambda: float((spiral_conv(sup, x, w, b)[0] * r).sum())
    return relative_error(grads, [numeric_gradient(f, v) for v in (x, w, b)])


def check_spectral(rng, fault=False):
    mesh = shapes.icosphere(1)
    op = build_spectral(mesh)
    k = int(rng.integers(1, 7))
    x = rng.normal(size=(2, mesh.n_vertices, 3))
    th = rng.normal(size=(k, 3, 4))
    b = rng.normal(size=4)
    r = rng.normal(size=(2, mesh.n_vertices, 4))
    _, xs = spectral_conv(op, x, th, b)
    grads = _fault(list(spectral_conv_backward(op, xs, th, r)), fault)
    f = lambda: float((spectral_conv(op, x, th, b)[0] * r).sum())
    return relative_error(grads, [numeric_gradient(f, v) for v in (x, th, b)])


def check_fc(rng, fault=False):
    x = rng.normal(size=(3, 7))
    w = rng.normal(size=(5, 7))
    b = rng.normal(size=5)
    r = rng.normal(size=(3, 5))
    grads = _fault(list(nn.fully_connected_backward(x, w, r)), fault)
    f = lambda: float((nn.fully_connected(x, w, b) * r).sum())
    return relative_error(grads, [numeric_gradient(f, v) for v in (x, w, b)])


def check_elu(rng, fault=False):
    x = rng.normal(size=(4, 6))
    x[np.abs(x) < 1e-3] = 0.5  # keep clear of the kink
    r = rng.normal(size=x.shape)
    grads = _fault([nn.elu_backward(x, r)], fault)
    f = lambda: float((nn.elu(x) * r).sum())
    return relative_error(grads, [numeric_gradient(f, x)])


def check_loss(rng, fault=False):
    pred = rng.normal(size=(2, 9, 3))
    target = rng.normal(size=(2, 9, 3))
    nodes = rng.normal(size=(2, 4, 3))
    idx = rng.choice(9, size=4, replace=False)
    _, g1 = nn.l1_vertex_loss(pred, target)
    _, g2 = nn.l1_graph_loss(nodes, target, idx)
    grads = _fault([g1, g2], fault)
    return relative_error(grads, [
        numeric_gradient(lambda: nn.l1_vertex_loss(pred, target)[0], pred),
        numeric_gradient(lambda: nn.l1_graph_loss(nodes, target, idx)[0], nodes)])


_E2E = {}


def _e2e_model():
    if "model" not in _E2E:
        mesh = shapes.icosphere(1)
        graph = extract_graph(mesh, 12)
        h = build_hierarchy(mesh, graph, [42, 12, 6])
        cfg = ModelConfig(latent_dim=4, encoder_widths=[4, 4], dtype="float64", spiral_length=7)
        _E2E["model"] = MeshAutoencoder(h, cfg)
    return _E2E["model"]


def check_end2end(rng, fault=False):
    """Latent -> decoder -> EDL -> l1 loss, against the latent and the last conv weights."""
    model = _e2e_model()
    for _, p in model.store.items():
        p.value[...] = rng.normal(scale=0.3, size=p.value.shape)
    model.store.zero_grad()
    z = rng.normal(size=model.config.latent_dim)
    target = model.template.vertices + rng.normal(scale=0.2, size=model.template.vertices.shape)
    out_w = model.store["out.weight"]
    _, dz = model.latent_loss_and_grad(z, target)
    grads = _fault([dz.copy(), out_w.grad.copy()], fault)
    model.store.zero_grad()

    def f():
        loss, _ = model.latent_loss_and_grad(z, target)
        model.store.zero_grad()
        return loss
    return relative_error(grads, [numeric_gradient(f, z), numeric_gradient(f, out_w.value)])


CHECKS = {"edl": check_edl, "spiral": check_spiral, "spectral": check_spectral, "fc": check_fc,
          "elu": check_elu, "loss": check_loss, "end2end": check_end2end}


def run_check(scope, seed, fault=False):
    if scope not in CHECKS:
        raise ValueError(f"unknown scope {scope!r}; choose from {SCOPES}")
    err = CHECKS[scope](np.random.default_rng(seed), fault)
    return CheckResult(scope, seed, err, TOLERANCES[scope])
