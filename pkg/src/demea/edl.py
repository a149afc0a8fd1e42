"""Embedded deformation layer.

Each graph node ``l`` carries a rotation ``R_l`` (three Euler angles) and a
translation ``t_l``. A template point ``p`` bound to nodes ``N_p`` with
normalized Gaussian weights ``w_l(p)`` moves to

    sum_{l in N_p} w_l(p) * (R_l (p - g_l) + g_l + t_l).

Everything here runs in float64.
"""
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .mesh import compute_metrics

SIGMA0 = 2.0 / 3.0


def neighbors_for_level(graph_level):
    """Number of skinning nodes per vertex for a graph on hierarchy level 1 or 2."""
    if graph_level == 1:
        return 6
    if graph_level == 2:
        return 12
    raise ValueError(f"graph_level must be 1 or 2, got {graph_level}")


def skinning_sigma(d_max, n_nodes, sigma0=SIGMA0):
    return sigma0 * d_max / np.sqrt(n_nodes)


@dataclass(frozen=True, eq=False)
class SkinningBinding:
    """Nearest-node indices, normalized weights and the Gaussian width per vertex."""

    nodes: np.ndarray    # (N_v, K) int64, nearest first
    weights: np.ndarray  # (N_v, K) float64, rows sum to 1
    sigma: float

    @property
    def k(self):
        return self.nodes.shape[1]


def gaussian_weights(points, node_positions, node_idx, sigma):
    """Normalized ``exp(-|g_l - p|^2 / (2 sigma^2))`` over each row of ``node_idx``.

    Exponents are shifted by the row minimum before exponentiation so a
    vertex whose nodes are all far away still gets finite weights.
    """
    d2 = ((node_positions[node_idx] - points[:, None, :]) ** 2).sum(-1)
    z = -d2 / (2.0 * sigma * sigma)
    z -= z.max(1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(1, keepdims=True)


def bind_skinning(mesh, graph, graph_level=None, n_neighbors=None):
    """Precompute the skinning of ``mesh`` to ``graph`` in the canonical pose.

    ``n_neighbors`` defaults to 6 for a level-1 graph and 12 for level 2.
    """
    if n_neighbors is None:
        n_neighbors = neighbors_for_level(graph_level)
    n_nodes = graph.node_count
    if n_nodes < n_neighbors:
        raise ValueError(f"{n_nodes} nodes cannot supply {n_neighbors} neighbors per vertex")
    sigma = skinning_sigma(compute_metrics(mesh).d_max, n_nodes)
    v = mesh.vertices
    g = np.asarray(graph.node_positions, dtype=np.float64)
    d2 = ((v[:, None, :] - g[None, :, :]) ** 2).sum(-1)
    # stable sort: equal distances resolve to the smaller node index
    nodes = np.argsort(d2, axis=1, kind="stable")[:, :n_neighbors].astype(np.int64)
    weights = gaussian_weights(v, g, nodes, sigma)
    return SkinningBinding(nodes, weights, float(sigma))


# -- rotations -----------------------------------------------------------------

def _axis_mats(angles):
    a = np.asarray(angles, dtype=np.float64)
    ca, sa = np.cos(a[..., 0]), np.sin(a[..., 0])
    cb, sb = np.cos(a[..., 1]), np.sin(a[..., 1])
    cg, sg = np.cos(a[..., 2]), np.sin(a[..., 2])
    z, o = np.zeros_like(ca), np.ones_like(ca)
    rx = np.stack([o, z, z, z, ca, -sa, z, sa, ca], -1).reshape(a.shape[:-1] + (3, 3))
    ry = np.stack([cb, z, sb, z, o, z, -sb, z, cb], -1).reshape(a.shape[:-1] + (3, 3))
    rz = np.stack([cg, -sg, z, sg, cg, z, z, z, o], -1).reshape(a.shape[:-1] + (3, 3))
    drx = np.stack([z, z, z, z, -sa, -ca, z, ca, -sa], -1).reshape(a.shape[:-1] + (3, 3))
    dry = np.stack([-sb, z, cb, z, z, z, -cb, z, -sb], -1).reshape(a.shape[:-1] + (3, 3))
    drz = np.stack([-sg, -cg, z, cg, -sg, z, z, z, z], -1).reshape(a.shape[:-1] + (3, 3))
    return (rx, ry, rz), (drx, dry, drz)


def euler_to_rotation(angles):
    """``R = R_z(gamma) R_y(beta) R_x(alpha)`` for angles ``(alpha, beta, gamma)``.

    Works on any leading batch shape ``(..., 3) -> (..., 3, 3)``.
    """
    (rx, ry, rz), _ = _axis_mats(angles)
    return rz @ ry @ rx


def euler_rotation_jacobian(angles):
    """``dR/d(alpha, beta, gamma)`` stacked as ``(..., 3, 3, 3)``, angle axis first."""
    (rx, ry, rz), (drx, dry, drz) = _axis_mats(angles)
    return np.stack([rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx], axis=-3)


# -- transforms ----------------------------------------------------------------

@dataclass
class NodeTransforms:
    """Per-node Euler angles (radians) and translations, optionally batched."""

    angles: np.ndarray
    translations: np.ndarray

    @classmethod
    def identity(cls, n_nodes, batch=None):
        shape = (n_nodes, 3) if batch is None else (batch, n_nodes, 3)
        return cls(np.zeros(shape), np.zeros(shape))

    @property
    def n_nodes(self):
        return self.angles.shape[-2]

    def rotations(self):
        return euler_to_rotation(self.angles)


def save_transforms(path, transforms):
    a = np.asarray(transforms.angles, dtype="<f4").reshape(-1, 3)
    t = np.asarray(transforms.translations, dtype="<f4").reshape(-1, 3)
    Path(path).write_bytes(struct.pack("<I", len(a)) + a.tobytes() + t.tobytes())


def load_transforms(path):
    data = Path(path).read_bytes()
    (n,) = struct.unpack_from("<I", data, 0)
    a = np.frombuffer(data, dtype="<f4", count=3 * n, offset=4).reshape(n, 3)
    t = np.frombuffer(data, dtype="<f4", count=3 * n, offset=4 + 12 * n).reshape(n, 3)
    return NodeTransforms(a.astype(np.float64), t.astype(np.float64))


# -- the layer -----------------------------------------------------------------

class EmbeddedDeformation:
    """Differentiable map from node transforms to deformed template vertices."""

    def __init__(self, mesh, graph, binding):
        self.mesh = mesh
        self.graph = graph
        self.binding = binding
        self.nodes = np.ascontiguousarray(graph.node_positions, dtype=np.float64)
        v = mesh.vertices
        self.offsets = np.ascontiguousarray(v[:, None, :] - self.nodes[binding.nodes])
        self._cache = None

    @property
    def n_nodes(self):
        return len(self.nodes)

    def deform(self, rotations, translations):
        """Vertices for explicit rotation matrices ``(B, L, 3, 3)`` and translations ``(B, L, 3)``."""
        rot = np.asarray(rotations, dtype=np.float64)
        trans = np.asarray(translations, dtype=np.float64)
        single = rot.ndim == 3
        if single:
            rot, trans = rot[None], trans[None]
        if rot.shape[1:] != (self.n_nodes, 3, 3) or trans.shape[1:] != (self.n_nodes, 3):
            raise ValueError("transform shapes do not match the graph")
        out = kernels.edl_forward(rot, trans, self.binding.nodes, self.binding.weights,
                                  self.offsets, self.mesh.vertices)
        return out[0] if single else out

    def forward(self, angles, translations):
        """Deformed vertices; caches state for :meth:`backward`. Accepts (L, 3) or (B, L, 3)."""
        angles = np.asarray(angles, dtype=np.float64)
        translations = np.asarray(translations, dtype=np.float64)
        single = angles.ndim == 2
        if single:
            angles, translations = angles[None], translations[None]
        rot = euler_to_rotation(angles)
        out = self.deform(rot, translations)
        self._cache = (angles, single)
        return out[0] if single else out

    def backward(self, upstream):
        """Gradients w.r.t. ``(angles, translations)`` of the last forward call."""
        if self._cache is None:
            raise RuntimeError("edl backward called without a cached forward pass")
        angles, single = self._cache
        up = np.asarray(upstream, dtype=np.float64)
        if single:
            up = up[None]
        grad_rot, grad_trans = self.rotation_backward(up)
        jac = euler_rotation_jacobian(angles)  # (B, L, 3, 3, 3)
        grad_angles = np.einsum("blij,blaij->bla", grad_rot, jac)
        if single:
            return grad_angles[0], grad_trans[0]
        return grad_angles, grad_trans

    def rotation_backward(self, upstream):
        """Gradients w.r.t. rotation matrices and translations, (B, L, 3, 3) and (B, L, 3)."""
        return kernels.edl_backward(upstream, self.binding.nodes, self.binding.weights,
                                    self.offsets, self.n_nodes)


def edl_forward(mesh, graph, binding, transforms):
    layer = EmbeddedDeformation(mesh, graph, binding)
    return layer.forward(transforms.angles, transforms.translations)


# -- local Procrustes ----------------------------------------------------------

def procrustes_rotation(canonical, deformed, rank_tol=1e-10):
    """Rotation ``R`` minimizing ``sum |R a_i - b_i|^2`` over SO(3) after centering.

    Returns ``(R, degenerate)``. Configurations of rank < 2 give the identity
    with ``degenerate=True``.
    """
    a = np.asarray(canonical, dtype=np.float64)
    b = np.asarray(deformed, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ValueError("point sets must both be (n, 3)")
    if np.array_equal(a, b):
        return np.eye(3), False
    a = a - a.mean(0)
    b = b - b.mean(0)
    h = a.T @ b
    u, s, vt = np.linalg.svd(h)
    scale = max(s[0], 1e-300)
    if len(a) < 2 or s[1] <= rank_tol * scale or s[0] <= 1e-300:
        return np.eye(3), True
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, False


def ring_rotations(node_positions, deformed_positions, neighbors, rank_tol=1e-10):
    """Per-node Procrustes rotation of each node's 1-ring (node included).

    ``node_positions`` is (L, 3); ``deformed_positions`` is (L, 3) or (B, L, 3).
    Solved as one batched SVD; degenerate and undeformed rings get the identity.
    """
    g = np.asarray(node_positions, dtype=np.float64)
    p = np.asarray(deformed_positions, dtype=np.float64)
    single = p.ndim == 2
    if single:
        p = p[None]
    width = 1 + max((len(nb) for nb in neighbors), default=0)
    ring = np.zeros((len(g), width), dtype=np.int64)
    mask = np.zeros((len(g), width))
    for l, nb in enumerate(neighbors):
        ring[l, 0] = l
        ring[l, 1:1 + len(nb)] = nb
        mask[l, :1 + len(nb)] = 1.0
    count = mask.sum(1)[:, None]
    a = g[ring]
    a = (a - (a * mask[..., None]).sum(1, keepdims=True) / count[..., None]) * mask[..., None]
    b = p[:, ring]
    b = b - (b * mask[None, ..., None]).sum(2, keepdims=True) / count[None, ..., None]
    h = np.einsum("lmi,blmj->blij", a, b)
    u, s, vt = np.linalg.svd(h)
    v = np.swapaxes(vt, -1, -2)
    d = np.sign(np.linalg.det(v @ np.swapaxes(u, -1, -2)))
    d[d == 0] = 1.0
    fix = np.ones(d.shape + (3,))
    fix[..., 2] = d
    r = (v * fix[..., None, :]) @ np.swapaxes(u, -1, -2)
    bad = (s[..., 1] <= rank_tol * s[..., 0]) | (s[..., 0] <= 1e-300)
    # untouched rings get the exact identity rather than an SVD round-off
    same = (p[:, ring] == g[ring][None]).all(axis=(-1, -2))
    r[bad | same] = np.eye(3)
    return r[0] if single else r
