# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures and results match ``demea._pykernels``."""
import numpy as np

from cython cimport floating
from libc.math cimport sqrt


def max_pairwise_distance(const double[:, ::1] pts):
    cdef Py_ssize_t n = pts.shape[0], i, j
    cdef double best = 0.0, dx, dy, dz, d
    for i in range(n):
        for j in range(i + 1, n):
            dx = pts[i, 0] - pts[j, 0]
            dy = pts[i, 1] - pts[j, 1]
            dz = pts[i, 2] - pts[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d > best:
                best = d
    return sqrt(best)


cdef inline void _closest_bary(double px, double py, double pz,
                               double ax, double ay, double az,
                               double bx, double by, double bz,
                               double cx, double cy, double cz,
                               double* out) noexcept nogil:
    # Region classification on the triangle's Voronoi regions.
    cdef double abx = bx - ax, aby = by - ay, abz = bz - az
    cdef double acx = cx - ax, acy = cy - ay, acz = cz - az
    cdef double apx = px - ax, apy = py - ay, apz = pz - az
    cdef double d1 = abx * apx + aby * apy + abz * apz
    cdef double d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        out[0] = 1.0; out[1] = 0.0; out[2] = 0.0
        return
    cdef double bpx = px - bx, bpy = py - by, bpz = pz - bz
    cdef double d3 = abx * bpx + aby * bpy + abz * bpz
    cdef double d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        out[0] = 0.0; out[1] = 1.0; out[2] = 0.0
        return
    cdef double vc = d1 * d4 - d3 * d2
    cdef double v, w
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        out[0] = 1.0 - v; out[1] = v; out[2] = 0.0
        return
    cdef double cpx = px - cx, cpy = py - cy, cpz = pz - cz
    cdef double d5 = abx * cpx + aby * cpy + abz * cpz
    cdef double d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        out[0] = 0.0; out[1] = 0.0; out[2] = 1.0
        return
    cdef double vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        out[0] = 1.0 - w; out[1] = 0.0; out[2] = w
        return
    cdef double va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out[0] = 0.0; out[1] = 1.0 - w; out[2] = w
        return
    cdef double denom = va + vb + vc
    if denom == 0.0:
        # degenerate triangle: fall back to the first corner
        out[0] = 1.0; out[1] = 0.0; out[2] = 0.0
        return
    denom = 1.0 / denom
    v = vb * denom
    w = vc * denom
    out[0] = 1.0 - v - w; out[1] = v; out[2] = w


def closest_triangle(const double[:, ::1] pts, const double[:, ::1] verts,
                     const long long[:, ::1] faces):
    cdef Py_ssize_t n = pts.shape[0], m = faces.shape[0], i, f
    face_idx = np.empty(n, dtype=np.int64)
    bary = np.empty((n, 3), dtype=np.float64)
    cdef long long[::1] fi = face_idx
    cdef double[:, ::1] bc = bary
    cdef double b[3]
    cdef double best, qx, qy, qz, d
    cdef long long a0, a1, a2
    for i in range(n):
        best = -1.0
        for f in range(m):
            a0 = faces[f, 0]; a1 = faces[f, 1]; a2 = faces[f, 2]
            _closest_bary(pts[i, 0], pts[i, 1], pts[i, 2],
                          verts[a0, 0], verts[a0, 1], verts[a0, 2],
                          verts[a1, 0], verts[a1, 1], verts[a1, 2],
                          verts[a2, 0], verts[a2, 1], verts[a2, 2], b)
            qx = b[0] * verts[a0, 0] + b[1] * verts[a1, 0] + b[2] * verts[a2, 0] - pts[i, 0]
            qy = b[0] * verts[a0, 1] + b[1] * verts[a1, 1] + b[2] * verts[a2, 1] - pts[i, 1]
            qz = b[0] * verts[a0, 2] + b[1] * verts[a1, 2] + b[2] * verts[a2, 2] - pts[i, 2]
            d = qx * qx + qy * qy + qz * qz
            if best < 0.0 or d < best:
                best = d
                fi[i] = f
                bc[i, 0] = b[0]; bc[i, 1] = b[1]; bc[i, 2] = b[2]
    return face_idx, bary


def edl_forward(const double[:, :, :, ::1] rot, const double[:, :, ::1] trans,
                const long long[:, ::1] nbr, const double[:, ::1] weights,
                const double[:, :, ::1] offsets, const double[:, ::1] base):
    cdef Py_ssize_t bsz = rot.shape[0], n = nbr.shape[0], k = nbr.shape[1]
    cdef Py_ssize_t b, i, j, r
    cdef long long l
    cdef double acc
    out = np.zeros((bsz, n, 3), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef double d
    for b in range(bsz):
        for i in range(n):
            for r in range(3):
                d = 0.0
                for j in range(k):
                    l = nbr[i, j]
                    acc = (rot[b, l, r, 0] * offsets[i, j, 0]
                           + rot[b, l, r, 1] * offsets[i, j, 1]
                           + rot[b, l, r, 2] * offsets[i, j, 2])
                    d += weights[i, j] * (acc - offsets[i, j, r] + trans[b, l, r])
                o[b, i, r] = base[i, r] + d
    return out


def edl_backward(const double[:, :, ::1] upstream, const long long[:, ::1] nbr,
                 const double[:, ::1] weights, const double[:, :, ::1] offsets,
                 Py_ssize_t n_nodes):
    cdef Py_ssize_t bsz = upstream.shape[0], n = nbr.shape[0], k = nbr.shape[1]
    cdef Py_ssize_t b, i, j, r, c
    cdef long long l
    cdef double wg
    grad_rot = np.zeros((bsz, n_nodes, 3, 3), dtype=np.float64)
    grad_trans = np.zeros((bsz, n_nodes, 3), dtype=np.float64)
    cdef double[:, :, :, ::1] gr = grad_rot
    cdef double[:, :, ::1] gt = grad_trans
    for b in range(bsz):
        for i in range(n):
            for j in range(k):
                l = nbr[i, j]
                for r in range(3):
                    wg = weights[i, j] * upstream[b, i, r]
                    gt[b, l, r] += wg
                    for c in range(3):
                        gr[b, l, r, c] += wg * offsets[i, j, c]
    return grad_rot, grad_trans


def spiral_gather(floating[:, :, ::1] x, const long long[:, ::1] spirals):
    cdef Py_ssize_t bsz = x.shape[0], n = spirals.shape[0], s = spirals.shape[1]
    cdef Py_ssize_t f = x.shape[2], b, i, j, c
    cdef long long idx
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((bsz, n, s, f), dtype=dtype)
    cdef floating[:, :, :, ::1] o = out
    for b in range(bsz):
        for i in range(n):
            for j in range(s):
                idx = spirals[i, j]
                if idx < 0:
                    continue
                for c in range(f):
                    o[b, i, j, c] = x[b, idx, c]
    return out


def spiral_scatter(floating[:, :, :, ::1] grad, const long long[:, ::1] spirals,
                   Py_ssize_t n_nodes):
    cdef Py_ssize_t bsz = grad.shape[0], n = spirals.shape[0], s = spirals.shape[1]
    cdef Py_ssize_t f = grad.shape[3], b, i, j, c
    cdef long long idx
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((bsz, n_nodes, f), dtype=dtype)
    cdef floating[:, :, ::1] o = out
    for b in range(bsz):
        for i in range(n):
            for j in range(s):
                idx = spirals[i, j]
                if idx < 0:
                    continue
                for c in range(f):
                    o[b, idx, c] += grad[b, i, j, c]
    return out
