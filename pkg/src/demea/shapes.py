"""Procedural template meshes used by tests, examples and the synthetic dataset."""
import numpy as np

from .mesh import Mesh


def icosphere(subdivisions=2, radius=1.0):
    """Subdivided icosahedron: 12, 42, 162, 642, ... vertices."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return Mesh(radius * np.array(verts), np.array(faces))


def grid(nx, ny, size=(1.0, 1.0)):
    """Flat (nx+1) x (ny+1) vertex grid in the z=0 plane, counter-clockwise faces."""
    xs = np.linspace(0, size[0], nx + 1)
    ys = np.linspace(0, size[1], ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], 1)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    faces = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            faces += [(a, b, c), (a, c, d)]
    return Mesh(verts, np.array(faces))


def hex_patch(radius=1.0):
    """Center vertex 0 surrounded by six vertices forming a regular hexagon."""
    ang = np.arange(6) * np.pi / 3
    ring = np.stack([np.cos(ang), np.sin(ang), np.zeros(6)], 1) * radius
    verts = np.vstack([[0.0, 0.0, 0.0], ring])
    faces = [(0, 1 + i, 1 + (i + 1) % 6) for i in range(6)]
    return Mesh(verts, np.array(faces))


def torus(n_major, n_minor, major=1.0, minor=0.35):
    """Closed torus with ``n_major * n_minor`` vertices."""
    u = np.arange(n_major) * 2 * np.pi / n_major
    v = np.arange(n_minor) * 2 * np.pi / n_minor
    U, V = np.meshgrid(u, v, indexing="ij")
    r = major + minor * np.cos(V)
    verts = np.stack([r * np.cos(U), r * np.sin(U), minor * np.sin(V)], -1).reshape(-1, 3)
    idx = np.arange(n_major * n_minor).reshape(n_major, n_minor)
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = idx[i, j]
            b = idx[(i + 1) % n_major, j]
            c = idx[(i + 1) % n_major, (j + 1) % n_minor]
            d = idx[i, (j + 1) % n_minor]
            faces += [(a, b, c), (a, c, d)]
    return Mesh(verts, np.array(faces))


def box_bar(nx=30, ny=4, nz=4, size=(1.5, 0.2, 0.2)):
    """Closed rectangular bar surface along x, outward-facing triangles.

    The default resolution gives 514 vertices.
    """
    lattice = {}
    verts = []

    def vid(i, j, k):
        key = (i, j, k)
        if key not in lattice:
            lattice[key] = len(verts)
            verts.append((size[0] * i / nx - size[0] / 2,
                          size[1] * j / ny - size[1] / 2,
                          size[2] * k / nz - size[2] / 2))
        return lattice[key]

    faces = []

    def quad_face(n1, n2, point, flip):
        for a in range(n1):
            for b in range(n2):
                p00, p10 = point(a, b), point(a + 1, b)
                p11, p01 = point(a + 1, b + 1), point(a, b + 1)
                if flip:
                    faces.extend([(p00, p11, p10), (p00, p01, p11)])
                else:
                    faces.extend([(p00, p10, p11), (p00, p11, p01)])

    quad_face(ny, nz, lambda a, b: vid(0, a, b), True)
    quad_face(ny, nz, lambda a, b: vid(nx, a, b), False)
    quad_face(nx, nz, lambda a, b: vid(a, 0, b), False)
    quad_face(nx, nz, lambda a, b: vid(a, ny, b), True)
    quad_face(nx, ny, lambda a, b: vid(a, b, 0), True)
    quad_face(nx, ny, lambda a, b: vid(a, b, nz), False)
    return Mesh(np.array(verts), np.array(faces))


def ellipsoid_bar(n_rings=21, n_segments=24, size=(1.5, 0.3, 0.3)):
    """Closed elongated ellipsoid along x with poles at both tips.

    ``2 + n_rings * n_segments`` vertices (506 by default), outward-facing triangles.
    """
    a, b, c = (s / 2 for s in size)
    theta = np.pi * np.arange(1, n_rings + 1) / (n_rings + 1)
    phi = 2 * np.pi * np.arange(n_segments) / n_segments
    T, P = np.meshgrid(theta, phi, indexing="ij")
    body = np.stack([a * np.cos(T), b * np.sin(T) * np.cos(P), c * np.sin(T) * np.sin(P)], -1)
    verts = np.vstack([[a, 0, 0], body.reshape(-1, 3), [-a, 0, 0]])
    top, bottom = 0, len(verts) - 1
    ring = lambda i, j: 1 + i * n_segments + j % n_segments
    faces = []
    for j in range(n_segments):
        faces.append((top, ring(0, j), ring(0, j + 1)))
        faces.append((bottom, ring(n_rings - 1, j + 1), ring(n_rings - 1, j)))
    for i in range(n_rings - 1):
        for j in range(n_segments):
            p00, p01 = ring(i, j), ring(i, j + 1)
            p10, p11 = ring(i + 1, j), ring(i + 1, j + 1)
            faces += [(p00, p10, p11), (p00, p11, p01)]
    return Mesh(verts, np.array(faces))
