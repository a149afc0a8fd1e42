"""Triangle mesh container, OBJ reading/writing and scale metrics."""
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels


class MeshError(ValueError):
    """Invalid mesh data or malformed OBJ input."""


class ObjParseError(MeshError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangle mesh.

    Vertex order is authoritative: every index-based structure built on top
    of a mesh (graphs, hierarchy levels, spirals) refers to this order.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise MeshError("face index out of range")
            bad = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if bad.any():
                raise MeshError(f"degenerate face {f[np.argmax(bad)].tolist()}")
        object.__setattr__(self, "vertices", _frozen(v, np.float64))
        object.__setattr__(self, "faces", _frozen(f, np.int64))

    @property
    def n_vertices(self):
        return len(self.vertices)

    @cached_property
    def edges(self):
        """Sorted (E, 2) array of undirected edges, smaller index first."""
        if not len(self.faces):
            return np.zeros((0, 2), dtype=np.int64)
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        e = np.unique(e, axis=0)
        e.setflags(write=False)
        return e

    @cached_property
    def adjacency(self):
        """Neighbor index lists, each sorted ascending."""
        nbrs = [[] for _ in range(self.n_vertices)]
        for a, b in self.edges.tolist():
            nbrs[a].append(b)
            nbrs[b].append(a)
        return [sorted(n) for n in nbrs]

    def with_vertices(self, vertices):
        """Same connectivity, new positions."""
        return Mesh(vertices, self.faces)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.faces, other.faces))

    __hash__ = None


@dataclass(frozen=True)
class BoundingMetrics:
    d_max: float
    bbox_diagonal: float


def load_mesh(path):
    """Read an ASCII Wavefront OBJ with triangle faces.

    Only ``v`` and ``f`` records are interpreted; normals, texture
    coordinates, groups and materials are skipped. Face entries may use the
    ``v/vt/vn`` forms and negative (relative) indices.
    """
    path = Path(path)
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ObjParseError(path, lineno, "vertex needs 3 coordinates")
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise ObjParseError(path, lineno, f"bad vertex coordinate in {line!r}") from None
            elif tag == "f":
                if len(parts) != 4:
                    raise ObjParseError(
                        path, lineno, f"only triangle faces are supported, got {len(parts) - 1} corners")
                idx = []
                for tok in parts[1:]:
                    try:
                        k = int(tok.split("/", 1)[0])
                    except ValueError:
                        raise ObjParseError(path, lineno, f"bad face index {tok!r}") from None
                    if k < 0:
                        k = len(verts) + k + 1
                    if k < 1 or k > len(verts):
                        raise ObjParseError(path, lineno, f"face index {tok} out of range")
                    idx.append(k - 1)
                if len(set(idx)) != 3:
                    raise ObjParseError(path, lineno, f"degenerate face {parts[1:]}")
                faces.append(idx)
    return Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_mesh(mesh, path):
    lines = ["v %.17g %.17g %.17g\n" % tuple(v) for v in mesh.vertices.tolist()]
    lines += ["f %d %d %d\n" % (a + 1, b + 1, c + 1) for a, b, c in mesh.faces.tolist()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def compute_metrics(mesh):
    v = mesh.vertices if isinstance(mesh, Mesh) else np.asarray(mesh, dtype=np.float64)
    if len(v) < 2:
        raise MeshError("need at least 2 vertices for scale metrics")
    d_max = kernels.max_pairwise_distance(v)
    diag = float(np.linalg.norm(v.max(0) - v.min(0)))
    return BoundingMetrics(d_max=float(d_max), bbox_diagonal=diag)
