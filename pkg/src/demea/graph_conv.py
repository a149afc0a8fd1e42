"""Spiral and Chebyshev graph convolutions and their precomputed supports."""
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from . import kernels
from .nn import glorot_uniform

PAD = -1


@dataclass(frozen=True, eq=False)
class SpiralSupport:
    """Per-node spiral index lists of fixed length, ``PAD`` for empty slots."""

    indices: np.ndarray
    isolated: np.ndarray

    @property
    def length(self):
        return self.indices.shape[1]

    @property
    def n_nodes(self):
        return self.indices.shape[0]


def _vertex_faces(mesh):
    out = [[] for _ in range(mesh.n_vertices)]
    for f in mesh.faces.tolist():
        for v in f:
            out[v].append(f)
    return out


def _ring1(n, nbrs, faces):
    if not nbrs:
        return []
    succ = {}
    for f in faces:
        i = f.index(n)
        a, b = f[(i + 1) % 3], f[(i + 2) % 3]
        succ.setdefault(a, []).append(b)
    order, seen = [], set()
    cur = nbrs[0]
    while True:
        order.append(cur)
        seen.add(cur)
        nxt = [b for b in sorted(succ.get(cur, ())) if b not in seen]
        if nxt:
            cur = nxt[0]
            continue
        rest = [u for u in nbrs if u not in seen]
        if not rest:
            return order
        cur = rest[0]


def spiral_order(mesh, node, max_len=None, adjacency=None, vertex_faces=None):
    """Spiral starting at ``node``: itself, its 1-ring in winding order, then outer rings.

    The 1-ring starts at the smallest-index neighbor and follows incident face
    winding (``node -> a -> b`` makes ``b`` follow ``a``). Each outer ring lists
    the unvisited neighbors of the previous ring's vertices, in that ring's
    order, smallest index first.
    """
    adj = mesh.adjacency if adjacency is None else adjacency
    vf = _vertex_faces(mesh) if vertex_faces is None else vertex_faces
    order = [node]
    seen = {node}
    ring = _ring1(node, adj[node], vf[node])
    while ring and (max_len is None or len(order) < max_len):
        ring = [u for u in ring if u not in seen]
        for u in ring:
            seen.add(u)
        order += ring
        nxt = []
        for u in ring:
            for w in adj[u]:
                if w not in seen and w not in nxt:
                    nxt.append(w)
        ring = nxt
    return order if max_len is None else order[:max_len]


def default_spiral_length(mesh, coverage=0.95):
    """Smallest length holding the full 2-ring spiral for ``coverage`` of the nodes."""
    adj = mesh.adjacency
    sizes = []
    for n in range(mesh.n_vertices):
        r1 = set(adj[n])
        r2 = set()
        for u in r1:
            r2.update(adj[u])
        r2 -= r1 | {n}
        sizes.append(1 + len(r1) + len(r2))
    sizes = np.sort(sizes)
    k = max(0, math.ceil(coverage * len(sizes)) - 1)
    return int(sizes[k])


def build_spirals(mesh, length=None):
    if length is None:
        length = default_spiral_length(mesh)
    if length < 1:
        raise ValueError("spiral length must be >= 1")
    adj = mesh.adjacency
    vf = _vertex_faces(mesh)
    idx = np.full((mesh.n_vertices, length), PAD, dtype=np.int64)
    isolated = np.zeros(mesh.n_vertices, dtype=bool)
    for n in range(mesh.n_vertices):
        s = spiral_order(mesh, n, length, adj, vf)
        idx[n, :len(s)] = s
        isolated[n] = not adj[n]
    return SpiralSupport(idx, isolated)


def spiral_conv(support, x, weights, bias):
    """``y_n = sum_s G_s x_{n_s} + bias`` with padded slots contributing zero.

    ``x`` is (B, N, F_in), ``weights`` is (S, F_out, F_in).
    """
    s, f_out, f_in = weights.shape
    if s != support.length or x.shape[-1] != f_in or x.shape[1] != support.n_nodes:
        raise ValueError("spiral_conv shape mismatch")
    gathered = kernels.spiral_gather(x, support.indices)  # (B, N, S, F_in)
    w = weights.transpose(0, 2, 1).reshape(s * f_in, f_out)
    y = gathered.reshape(len(x), support.n_nodes, s * f_in) @ w + bias
    return y, gathered


def spiral_conv_backward(support, gathered, weights, dy):
    s, f_out, f_in = weights.shape
    b, n = dy.shape[:2]
    flat = gathered.reshape(b * n, s * f_in)
    dyf = dy.reshape(b * n, f_out)
    dw = (flat.T @ dyf).reshape(s, f_in, f_out).transpose(0, 2, 1)
    db = dyf.sum(0)
    w = weights.transpose(0, 2, 1).reshape(s * f_in, f_out)
    dgath = (dyf @ w.T).reshape(b, n, s, f_in)
    dx = kernels.spiral_scatter(dgath, support.indices, support.n_nodes)
    return dx, dw, db


class SpiralConv:
    def __init__(self, store, name, support, f_in, f_out, rng, zero=False):
        s = support.length
        self.support = support
        shape = (s, f_out, f_in)
        self.w = store.add(f"{name}.weight", np.zeros(shape) if zero
                           else glorot_uniform(rng, shape, s * f_in, f_out))
        self.b = store.add(f"{name}.bias", np.zeros(f_out))

    def forward(self, x):
        y, self._gathered = spiral_conv(self.support, x, self.w.value, self.b.value)
        return y

    def backward(self, dy):
        dx, dw, db = spiral_conv_backward(self.support, self._gathered, self.w.value, dy)
        self.w.grad += dw
        self.b.grad += db
        return dx


# -- spectral -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralOperator:
    """Scaled normalized Laplacian ``2 L / lambda_max - I`` with ``lambda_max = 2``."""

    scaled: sparse.csr_matrix
    lambda_max: float = 2.0

    @property
    def n_nodes(self):
        return self.scaled.shape[0]

    def laplacian(self):
        return self.scaled + sparse.identity(self.n_nodes, format="csr")


def normalized_laplacian(n, edges):
    """``I - D^-1/2 A D^-1/2``; nodes without edges get an identity row."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    a = sparse.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                          shape=(n, n)).tocsr()
    a.data[:] = 1.0
    deg = np.asarray(a.sum(1)).ravel()
    inv = np.zeros(n)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    d = sparse.diags(inv)
    return (sparse.identity(n, format="csr") - d @ a @ d).tocsr()


def build_spectral(mesh):
    lap = normalized_laplacian(mesh.n_vertices, mesh.edges)
    scaled = (2.0 / 2.0) * lap - sparse.identity(mesh.n_vertices, format="csr")
    scaled = scaled.tocsr()
    scaled.eliminate_zeros()
    scaled.sort_indices()
    return SpectralOperator(scaled)


def _apply(op, x):
    b, n, f = x.shape
    flat = x.transpose(1, 0, 2).reshape(n, b * f)
    out = op.scaled.astype(x.dtype) @ flat
    return np.asarray(out).reshape(n, b, f).transpose(1, 0, 2)


def chebyshev_basis(op, x, k):
    """``[T_0(L~) x, ..., T_{k-1}(L~) x]`` via the three-term recurrence."""
    xs = [x]
    if k > 1:
        xs.append(_apply(op, x))
    for _ in range(2, k):
        xs.append(2 * _apply(op, xs[-1]) - xs[-2])
    return xs


def spectral_conv(op, x, theta, bias):
    """``y = sum_k T_k(L~) x theta_k + bias`` with ``theta`` of shape (K, F_in, F_out)."""
    k, f_in, f_out = theta.shape
    if k < 1 or x.shape[-1] != f_in or x.shape[1] != op.n_nodes:
        raise ValueError("spectral_conv shape mismatch")
    xs = chebyshev_basis(op, x, k)
    y = sum(xk @ theta[i] for i, xk in enumerate(xs)) + bias
    return y, xs


def spectral_conv_backward(op, xs, theta, dy):
    k = theta.shape[0]
    b, n, f_out = dy.shape
    dyf = dy.reshape(b * n, f_out)
    dtheta = np.stack([xk.reshape(b * n, -1).T @ dyf for xk in xs])
    db = dyf.sum(0)
    g = [dy @ theta[i].T for i in range(k)]
    # adjoint of X_k = 2 L~ X_{k-1} - X_{k-2}; L~ is symmetric
    for i in range(k - 1, 1, -1):
        g[i - 1] = g[i - 1] + 2 * _apply(op, g[i])
        g[i - 2] = g[i - 2] - g[i]
    if k > 1:
        g[0] = g[0] + _apply(op, g[1])
    return g[0], dtheta, db


class ChebConv:
    def __init__(self, store, name, op, f_in, f_out, order, rng, zero=False):
        self.op = op
        shape = (order, f_in, f_out)
        self.w = store.add(f"{name}.weight", np.zeros(shape) if zero
                           else glorot_uniform(rng, shape, order * f_in, f_out))
        self.b = store.add(f"{name}.bias", np.zeros(f_out))

    def forward(self, x):
        y, self._xs = spectral_conv(self.op, x, self.w.value, self.b.value)
        return y

    def backward(self, dy):
        dx, dw, db = spectral_conv_backward(self.op, self._xs, self.w.value, dy)
        self.w.grad += dw
        self.b.grad += db
        return dx


# -- serialization -------------------------------------------------------------

def save_spirals(path, support):
    idx = np.ascontiguousarray(support.indices, dtype="<i8")
    Path(path).write_bytes(struct.pack("<II", *idx.shape) + idx.tobytes())


def load_spirals(path):
    data = Path(path).read_bytes()
    n, s = struct.unpack_from("<II", data, 0)
    idx = np.frombuffer(data, dtype="<i8", count=n * s, offset=8).reshape(n, s).astype(np.int64)
    isolated = (idx[:, 1:] == PAD).all(1) if s > 1 else np.zeros(n, dtype=bool)
    return SpiralSupport(idx, isolated)


def save_laplacian(path, op):
    coo = op.scaled.tocoo()
    order = np.lexsort((coo.col, coo.row))
    rec = np.zeros(len(order), dtype=[("r", "<u4"), ("c", "<u4"), ("v", "<f8")])
    rec["r"], rec["c"], rec["v"] = coo.row[order], coo.col[order], coo.data[order]
    Path(path).write_bytes(struct.pack("<II", op.n_nodes, len(rec)) + rec.tobytes())


def load_laplacian(path):
    data = Path(path).read_bytes()
    n, nnz = struct.unpack_from("<II", data, 0)
    rec = np.frombuffer(data, dtype=[("r", "<u4"), ("c", "<u4"), ("v", "<f8")], count=nnz, offset=8)
    m = sparse.csr_matrix((rec["v"].astype(np.float64), (rec["r"].astype(np.int64), rec["c"].astype(np.int64))),
                          shape=(n, n))
    m.sort_indices()
    return SpectralOperator(m)
