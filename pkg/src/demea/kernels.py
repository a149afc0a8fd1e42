"""Backend selection for the hot loops.

The compiled extension ``demea._ckernels`` is used when it imports; otherwise
(or when ``DEMEA_PURE_PYTHON=1``) the numpy versions in ``demea._pykernels``
are used. Both expose the same functions with identical semantics:

``max_pairwise_distance(pts)``
    Largest Euclidean distance between any two rows of an (N, 3) array.
``closest_triangle(pts, verts, faces)``
    For each point, the index of the closest triangle (first on ties) and the
    barycentric coordinates of the closest point on it.
``edl_forward(rot, trans, nbr, weights, offsets, base)``
    Blended per-node rigid transforms applied to skinned vertices, evaluated
    as ``base + sum_k w_k ((R_k - I) o_k + t_k)`` so identity transforms
    return ``base`` bit for bit.
``edl_backward(upstream, nbr, weights, offsets, n_nodes)``
    Gradients of ``edl_forward`` w.r.t. rotation matrices and translations.
``spiral_gather(x, spirals)`` / ``spiral_scatter(grad, spirals, n_nodes)``
    Batched gather along spiral index lists (-1 = padding) and its adjoint.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("DEMEA_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def max_pairwise_distance(pts, impl=None):
    return (impl or _impl).max_pairwise_distance(_f64(pts))


def closest_triangle(pts, verts, faces, impl=None):
    return (impl or _impl).closest_triangle(_f64(pts), _f64(verts), _i64(faces))


def edl_forward(rot, trans, nbr, weights, offsets, base, impl=None):
    return (impl or _impl).edl_forward(
        _f64(rot), _f64(trans), _i64(nbr), _f64(weights), _f64(offsets), _f64(base))


def edl_backward(upstream, nbr, weights, offsets, n_nodes, impl=None):
    return (impl or _impl).edl_backward(
        _f64(upstream), _i64(nbr), _f64(weights), _f64(offsets), int(n_nodes))


def _float_contig(a):
    a = np.asarray(a)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return np.ascontiguousarray(a)


def spiral_gather(x, spirals, impl=None):
    return (impl or _impl).spiral_gather(_float_contig(x), _i64(spirals))


def spiral_scatter(grad, spirals, n_nodes, impl=None):
    return (impl or _impl).spiral_scatter(_float_contig(grad), _i64(spirals), int(n_nodes))


def available_backends():
    """Mapping of backend name to implementation module for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
