"""Dense layers, losses, Adam and checkpoint IO.

Layers form static feed-forward chains. Each layer object caches what its
``backward`` needs during ``forward`` and accumulates parameter gradients
into the shared :class:`ParameterStore`. Feature maps are batched arrays of
shape ``(batch, rows, channels)``.
"""
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"DEMEA\0"
CHECKPOINT_VERSION = 1


class Parameter:
    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value):
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)


class ParameterStore:
    """Named trainable tensors with gradient slots and Adam moments."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params = OrderedDict()
        self.step = 0

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Parameter(np.array(value, dtype=self.dtype))
        self.params[name] = p
        return p

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.grad[...] = 0

    def n_values(self):
        return sum(p.value.size for p in self.params.values())

    def flat_values(self):
        return np.concatenate([p.value.ravel() for p in self.params.values()])

    def flat_grads(self):
        return np.concatenate([p.grad.ravel() for p in self.params.values()])


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def adam_step(store, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update in place, then zero the gradients."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in store.params.values():
        g = p.grad
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        m_hat = p.m / c1
        v_hat = p.v / c2
        p.value -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.value.dtype)
        g[...] = 0


# -- layers --------------------------------------------------------------------

def fully_connected(x, weight, bias):
    """``y = W x + b`` on the flattened trailing dims; ``x`` is (B, D)."""
    return x @ weight.T + bias


def fully_connected_backward(x, weight, dy):
    return dy @ weight, dy.T @ x, dy.sum(0)


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def elu_backward(x, dy):
    return dy * np.where(x > 0, 1.0, np.exp(np.minimum(x, 0))).astype(dy.dtype)


class Dense:
    """Fully connected layer applied to the flattened feature map."""

    def __init__(self, store, name, n_in, n_out, rng, zero=False):
        self.w = store.add(f"{name}.weight", np.zeros((n_out, n_in)) if zero
                           else glorot_uniform(rng, (n_out, n_in), n_in, n_out))
        self.b = store.add(f"{name}.bias", np.zeros(n_out))
        self._x = None

    def forward(self, x):
        self._shape = x.shape
        x = x.reshape(len(x), -1)
        self._x = x
        return fully_connected(x, self.w.value, self.b.value)

    def backward(self, dy):
        dx, dw, db = fully_connected_backward(self._x, self.w.value, dy)
        self.w.grad += dw
        self.b.grad += db
        return dx.reshape(self._shape)


class ELU:
    def forward(self, x):
        self._x = x
        return elu(x)

    def backward(self, dy):
        return elu_backward(self._x, dy)


class Reshape:
    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, x):
        self._in = x.shape
        return x.reshape((len(x),) + self.shape)

    def backward(self, dy):
        return dy.reshape(self._in)


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


# -- losses --------------------------------------------------------------------

def l1_vertex_loss(pred, target):
    """Mean over vertices (and batch) of the per-vertex 1-norm of the difference.

    Accepts (N, 3) or (B, N, 3). Returns ``(loss, grad)`` with
    ``grad = sign(pred - target) / (B * N)`` and ``sign(0) = 0``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    count = int(np.prod(pred.shape[:-1]))
    loss = float(np.abs(diff).sum()) / count
    return loss, np.sign(diff) / count


def l1_graph_loss(node_positions, target_vertices, node_to_vertex):
    """Mean over graph nodes of ``|t_l - v*_{i_l}|_1``; same batching as the vertex loss."""
    target = np.asarray(target_vertices)[..., np.asarray(node_to_vertex), :]
    return l1_vertex_loss(node_positions, target)


# -- checkpoints ---------------------------------------------------------------

def _write_tensors(path, tensors):
    buf = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        buf.append(struct.pack("<I", len(raw)))
        buf.append(raw)
        buf.append(struct.pack("<I", arr.ndim))
        buf.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(buf))


def _read_tensors(path):
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    out = OrderedDict()
    while off < len(data):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + n].decode("utf-8")
        off += n
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(dims)
        off += 4 * count
        out[name] = arr.astype(np.float32)
    return out


def moments_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".adam" + path.suffix)


def save_checkpoint(store, path, with_moments=True):
    """Write parameter values; Adam moments go to a sibling ``*.adam*`` file."""
    _write_tensors(path, [(k, p.value) for k, p in store.items()])
    if with_moments:
        tensors = [("step", np.array(store.step, dtype=np.float32))]
        for k, p in store.items():
            tensors += [(f"{k}.m", p.m), (f"{k}.v", p.v)]
        _write_tensors(moments_path(path), tensors)


def load_checkpoint(store, path, with_moments=True):
    """Fill ``store`` (already holding the expected names/shapes) from disk."""
    values = _read_tensors(path)
    missing = set(store.params) - set(values)
    if missing:
        raise ValueError(f"{path}: missing parameters {sorted(missing)}")
    for k, p in store.items():
        if values[k].shape != p.value.shape:
            raise ValueError(f"{path}: {k} has shape {values[k].shape}, expected {p.value.shape}")
        p.value[...] = values[k]
    mp = moments_path(path)
    if with_moments and mp.exists():
        mom = _read_tensors(mp)
        store.step = int(mom["step"])
        for k, p in store.items():
            p.m[...] = mom[f"{k}.m"]
            p.v[...] = mom[f"{k}.v"]
    return store
