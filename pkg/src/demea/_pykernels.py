"""Numpy implementations of the hot loops, used when the extension is absent."""
import numpy as np
from scipy import sparse


def max_pairwise_distance(pts, chunk=1024):
    pts = np.asarray(pts, dtype=np.float64)
    best = 0.0
    for start in range(0, len(pts), chunk):
        block = pts[start:start + chunk]
        d = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        best = max(best, float(d.max()))
    return float(np.sqrt(best))


def _closest_bary(p, a, b, c):
    """Barycentric coordinates of the closest point of each triangle to ``p``.

    ``p`` is (3,), ``a``, ``b``, ``c`` are (M, 3). Region tests are evaluated
    for every triangle and resolved in the same priority order as the
    compiled kernel so both backends agree bit for bit on region choice.
    """
    m = len(a)
    ab, ac, ap = b - a, c - a, p - a
    d1 = (ab * ap).sum(1)
    d2 = (ac * ap).sum(1)
    bp = p - b
    d3 = (ab * bp).sum(1)
    d4 = (ac * bp).sum(1)
    cp = p - c
    d5 = (ab * cp).sum(1)
    d6 = (ac * cp).sum(1)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    out = np.empty((m, 3))
    done = np.zeros(m, dtype=bool)

    def assign(mask, vals):
        mask = mask & ~done
        if mask.any():
            out[mask] = vals(mask)
            done[mask] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), lambda k: [1.0, 0.0, 0.0])
        assign((d3 >= 0) & (d4 <= d3), lambda k: [0.0, 1.0, 0.0])

        def edge_ab(k):
            v = d1[k] / (d1[k] - d3[k])
            return np.stack([1 - v, v, np.zeros_like(v)], 1)

        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), edge_ab)
        assign((d6 >= 0) & (d5 <= d6), lambda k: [0.0, 0.0, 1.0])

        def edge_ac(k):
            w = d2[k] / (d2[k] - d6[k])
            return np.stack([1 - w, np.zeros_like(w), w], 1)

        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), edge_ac)

        def edge_bc(k):
            w = (d4[k] - d3[k]) / ((d4[k] - d3[k]) + (d5[k] - d6[k]))
            return np.stack([np.zeros_like(w), 1 - w, w], 1)

        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), edge_bc)
        denom = va + vb + vc
        assign(denom == 0, lambda k: [1.0, 0.0, 0.0])

        def interior(k):
            inv = 1.0 / denom[k]
            v = vb[k] * inv
            w = vc[k] * inv
            return np.stack([1 - v - w, v, w], 1)

        assign(np.ones(m, dtype=bool), interior)
    return out


def closest_triangle(pts, verts, faces):
    pts = np.asarray(pts, dtype=np.float64)
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    face_idx = np.empty(len(pts), dtype=np.int64)
    bary = np.empty((len(pts), 3))
    for i, p in enumerate(pts):
        bc = _closest_bary(p, a, b, c)
        q = bc[:, :1] * a + bc[:, 1:2] * b + bc[:, 2:] * c - p
        d = (q * q).sum(1)
        f = int(np.argmin(d))  # first minimum, same tie rule as the loop kernel
        face_idx[i] = f
        bary[i] = bc[f]
    return face_idx, bary


def _node_scatter(nbr, n_nodes):
    n, k = nbr.shape
    cols = np.arange(n * k)
    return sparse.csr_matrix(
        (np.ones(n * k), (nbr.reshape(-1), cols)), shape=(n_nodes, n * k))


def edl_forward(rot, trans, nbr, weights, offsets, base):
    r = rot[:, nbr]  # (B, N, K, 3, 3)
    disp = np.einsum("bnkij,nkj->bnki", r, offsets) - offsets[None]
    disp += trans[:, nbr]
    return base[None] + np.einsum("nk,bnki->bni", weights, disp)


def edl_backward(upstream, nbr, weights, offsets, n_nodes):
    bsz = upstream.shape[0]
    n, k = nbr.shape
    scatter = _node_scatter(nbr, n_nodes)
    wg = weights[None, :, :, None] * upstream[:, :, None, :]  # (B, N, K, 3)
    outer = wg[..., :, None] * offsets[None, :, :, None, :]   # (B, N, K, 3, 3)
    grad_trans = np.empty((bsz, n_nodes, 3))
    grad_rot = np.empty((bsz, n_nodes, 3, 3))
    for b in range(bsz):
        grad_trans[b] = scatter @ wg[b].reshape(n * k, 3)
        grad_rot[b] = (scatter @ outer[b].reshape(n * k, 9)).reshape(n_nodes, 3, 3)
    return grad_rot, grad_trans


def spiral_gather(x, spirals):
    bsz, n_in, f = x.shape
    padded = np.concatenate([x, np.zeros((bsz, 1, f), dtype=x.dtype)], axis=1)
    idx = np.where(spirals < 0, n_in, spirals)
    return padded[:, idx]


def spiral_scatter(grad, spirals, n_nodes):
    bsz, n, s, f = grad.shape
    flat = spirals.reshape(-1)
    keep = flat >= 0
    cols = np.arange(n * s)[keep]
    scatter = sparse.csr_matrix(
        (np.ones(len(cols), dtype=grad.dtype), (flat[keep], cols)), shape=(n_nodes, n * s))
    g = grad.reshape(bsz, n * s, f).transpose(1, 0, 2).reshape(n * s, bsz * f)
    out = scatter @ g
    return np.ascontiguousarray(
        np.asarray(out).reshape(n_nodes, bsz, f).transpose(1, 0, 2)).astype(grad.dtype, copy=False)
