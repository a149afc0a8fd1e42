"""Quadric edge collapse, embedded graph extraction and the mesh hierarchy.

Levels are nested: every vertex of a coarser level is a vertex of the next
finer level. Features move down a level by selecting the surviving rows and
up a level by barycentric interpolation on the closest coarse triangle.
"""
import heapq
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from . import kernels
from .mesh import Mesh, MeshError, load_mesh, save_mesh


class HierarchyError(ValueError):
    pass


# Sort-key flags. A collapse that removes a protected vertex sorts after every
# finite-cost collapse regardless of its quadric error.
_BLOCKED = 2
_PENALIZED = 1
_FREE = 0


def _quadrics(verts, faces, boundary_weight=1000.0):
    """Area-weighted plane quadrics per vertex, plus boundary constraint planes."""
    n = len(verts)
    q = np.zeros((n, 4, 4))
    if not len(faces):
        return q
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    nrm = np.cross(b - a, c - a)
    length = np.linalg.norm(nrm, axis=1)
    area = 0.5 * length
    unit = np.divide(nrm, length[:, None], out=np.zeros_like(nrm), where=length[:, None] > 0)
    plane = np.concatenate([unit, -(unit * a).sum(1, keepdims=True)], axis=1)
    kf = area[:, None, None] * plane[:, :, None] * plane[:, None, :]
    for j in range(3):
        np.add.at(q, faces[:, j], kf)

    # Edges used by exactly one face get a plane through the edge, perpendicular
    # to the face, so open borders do not shrink.
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    owner = np.tile(np.arange(len(faces)), 3)
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    border = counts[inv.reshape(-1)] == 1
    if border.any():
        w = boundary_weight * area.mean()
        be, bf = e[border], owner[border]
        d = verts[be[:, 1]] - verts[be[:, 0]]
        bn = np.cross(d, unit[bf])
        bl = np.linalg.norm(bn, axis=1)
        ok = bl > 0
        bn = bn[ok] / bl[ok, None]
        be = be[ok]
        bp = np.concatenate([bn, -(bn * verts[be[:, 0]]).sum(1, keepdims=True)], axis=1)
        kb = w * bp[:, :, None] * bp[:, None, :]
        np.add.at(q, be[:, 0], kb)
        np.add.at(q, be[:, 1], kb)
    return q


_SYM = [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)]


def _qerr(q, x, y, z):
    a2, ab, ac, ad, b2, bc, bd, c2, cd, d2 = q
    return (a2 * x * x + 2 * ab * x * y + 2 * ac * x * z + 2 * ad * x + b2 * y * y
            + 2 * bc * y * z + 2 * bd * y + c2 * z * z + 2 * cd * z + d2)


def _qmin(q):
    """Minimizer of a quadric, or None when its 3x3 block is near singular."""
    a2, ab, ac, ad, b2, bc, bd, c2, cd, d2 = q
    det = a2 * (b2 * c2 - bc * bc) - ab * (ab * c2 - bc * ac) + ac * (ab * bc - b2 * ac)
    scale = max(abs(a2), abs(b2), abs(c2), 1e-300)
    if abs(det) <= 1e-10 * scale ** 3:
        return None
    r0, r1, r2 = -ad, -bd, -cd
    x = (r0 * (b2 * c2 - bc * bc) - ab * (r1 * c2 - bc * r2) + ac * (r1 * bc - b2 * r2)) / det
    y = (a2 * (r1 * c2 - bc * r2) - r0 * (ab * c2 - bc * ac) + ac * (ab * r2 - r1 * ac)) / det
    z = (a2 * (b2 * r2 - r1 * bc) - ab * (ab * r2 - r1 * ac) + r0 * (ab * bc - b2 * ac)) / det
    return (x, y, z)


def _normal(p, q, r):
    ux, uy, uz = q[0] - p[0], q[1] - p[1], q[2] - p[2]
    vx, vy, vz = r[0] - p[0], r[1] - p[1], r[2] - p[2]
    return (uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx)


class _Simplifier:
    """Greedy quadric edge collapse on an indexed triangle mesh.

    ``placement="endpoint"`` keeps one of the two edge endpoints in place, so
    the surviving vertices are a subset of the input. ``placement="optimal"``
    moves the kept vertex to the quadric minimizer when it is well defined.
    Heap keys are ``(blocked, penalized, cost, a, b)``; entries whose key no
    longer matches a fresh, fully checked evaluation are re-queued when popped.
    """

    def __init__(self, verts, faces, protected=(), placement="endpoint"):
        verts = np.asarray(verts, dtype=np.float64)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        n = len(verts)
        self.pos = [tuple(p) for p in verts.tolist()]
        self.placement = placement
        self.protected = [False] * n
        for v in protected:
            self.protected[v] = True
        qm = _quadrics(verts, faces)
        self.q = [tuple(row) for row in qm[:, [i for i, _ in _SYM], [j for _, j in _SYM]].tolist()]
        self.alive = [True] * n
        self.faces = [list(f) for f in faces.tolist()]
        self.face_alive = [True] * len(self.faces)
        self.vfaces = [set() for _ in range(n)]
        self.nbrs = [set() for _ in range(n)]
        for fi, (a, b, c) in enumerate(self.faces):
            for v in (a, b, c):
                self.vfaces[v].add(fi)
            self.nbrs[a].update((b, c))
            self.nbrs[b].update((a, c))
            self.nbrs[c].update((a, b))
        self.n_alive = n
        self.heap = []

    def _flips(self, keep, remove, p):
        """True if moving ``keep`` and ``remove`` onto ``p`` folds a face over."""
        pos = self.pos
        for v in (keep, remove):
            for fi in self.vfaces[v]:
                f = self.faces[fi]
                if keep in f and remove in f:
                    continue
                old = [pos[x] for x in f]
                new = [p if x == keep or x == remove else pos[x] for x in f]
                n0 = _normal(*old)
                n1 = _normal(*new)
                if n0[0] * n1[0] + n0[1] * n1[1] + n0[2] * n1[2] <= 0.0:
                    return True
        return False

    def _link_ok(self, a, b):
        shared = len(self.vfaces[a] & self.vfaces[b])
        return len(self.nbrs[a] & self.nbrs[b]) == shared

    def _evaluate(self, a, b, check=True):
        qs = tuple(x + y for x, y in zip(self.q[a], self.q[b]))
        if self.placement == "optimal":
            keep, remove = a, b
            pa, pb = self.pos[a], self.pos[b]
            cands = [pa, pb, ((pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2, (pa[2] + pb[2]) / 2)]
            opt = _qmin(qs)
            if opt is not None:
                cands.insert(0, opt)
            errs = [_qerr(qs, *c) for c in cands]
            i = errs.index(min(errs))
            cost, p = errs[i], cands[i]
        else:
            options = []
            for keep, remove in ((a, b), (b, a)):
                if not self.protected[remove]:
                    options.append((_qerr(qs, *self.pos[keep]), keep, remove))
            if not options:
                return (_BLOCKED, 0, 0.0, a, b), (a, b, self.pos[a])
            # ties keep the smaller index, which is listed first
            cost, keep, remove = min(options, key=lambda o: o[0])
            p = self.pos[keep]
        flag = _FREE
        if check and (not self._link_ok(a, b) or self._flips(keep, remove, p)):
            flag = _PENALIZED
        return (_FREE, flag, cost, a, b), (keep, remove, p)

    def _push(self, a, b):
        if a > b:
            a, b = b, a
        # fold-over and link checks are deferred until the entry is popped
        key, _ = self._evaluate(a, b, check=False)
        heapq.heappush(self.heap, key)

    def _collapse(self, keep, remove, p):
        self.pos[keep] = p
        self.q[keep] = tuple(x + y for x, y in zip(self.q[keep], self.q[remove]))
        for fi in list(self.vfaces[remove]):
            f = self.faces[fi]
            for v in f:
                self.vfaces[v].discard(fi)
            if keep in f:
                self.face_alive[fi] = False
                continue
            f[f.index(remove)] = keep
            fs = set(f)
            if any(set(self.faces[g]) == fs for g in self.vfaces[keep]):
                self.face_alive[fi] = False
                continue
            for v in f:
                self.vfaces[v].add(fi)
        self.vfaces[remove] = set()
        for u in self.nbrs[remove]:
            self.nbrs[u].discard(remove)
            if u != keep:
                self.nbrs[u].add(keep)
                self.nbrs[keep].add(u)
        self.nbrs[keep].discard(remove)
        self.nbrs[remove] = set()
        self.alive[remove] = False
        self.n_alive -= 1

    def run(self, target):
        for a in range(len(self.pos)):
            for b in sorted(self.nbrs[a]):
                if a < b:
                    self._push(a, b)
        while self.n_alive > target:
            if not self.heap:
                raise HierarchyError(
                    f"cannot simplify below {self.n_alive} vertices (target {target})")
            key = heapq.heappop(self.heap)
            a, b = key[3], key[4]
            if not (self.alive[a] and self.alive[b] and b in self.nbrs[a]):
                continue
            fresh, action = self._evaluate(a, b)
            if fresh != key:
                heapq.heappush(self.heap, fresh)
                continue
            if key[0] == _BLOCKED:
                raise HierarchyError(
                    f"only protected vertices can still be removed at {self.n_alive} vertices "
                    f"(target {target})")
            keep = action[0]
            self._collapse(*action)
            for w in sorted(self.nbrs[keep]):
                self._push(keep, w)
        return self

    def result(self):
        """Surviving input indices (ascending), their positions and local faces/edges."""
        kept = np.flatnonzero(self.alive)
        local = -np.ones(len(self.pos), dtype=np.int64)
        local[kept] = np.arange(len(kept))
        faces = [self.faces[i] for i, ok in enumerate(self.face_alive) if ok]
        faces = local[np.array(faces, dtype=np.int64).reshape(-1, 3)]
        edges = sorted({(int(local[a]), int(local[b])) if local[a] < local[b]
                        else (int(local[b]), int(local[a]))
                        for a in kept for b in self.nbrs[a]})
        pos = np.array([self.pos[i] for i in kept], dtype=np.float64).reshape(-1, 3)
        return kept, pos, faces, np.array(edges, dtype=np.int64).reshape(-1, 2)


def simplify(verts, faces, target, protected=(), placement="endpoint"):
    """Quadric edge collapse down to ``target`` vertices.

    Returns ``(kept, positions, faces, edges)`` where ``kept`` lists the
    surviving input indices in ascending order and ``faces``/``edges`` index
    into ``kept``.
    """
    verts = np.asarray(verts, dtype=np.float64)
    if target >= len(verts):
        raise HierarchyError(f"target {target} must be below vertex count {len(verts)}")
    if len(set(protected)) > target:
        raise HierarchyError(
            f"{len(set(protected))} protected vertices do not fit in {target}")
    return _Simplifier(verts, faces, protected, placement).run(target).result()


@dataclass(frozen=True, eq=False)
class DeformationGraph:
    """Embedded deformation graph whose nodes sit on mesh vertices."""

    node_positions: np.ndarray
    node_to_vertex: np.ndarray
    edges: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    @property
    def node_count(self):
        return len(self.node_to_vertex)

    def neighbors(self):
        nbrs = [[] for _ in range(self.node_count)]
        for a, b in np.asarray(self.edges).tolist():
            nbrs[a].append(b)
            nbrs[b].append(a)
        return [sorted(n) for n in nbrs]

    @classmethod
    def from_mesh(cls, mesh, node_to_vertex, edges, faces=None):
        idx = np.asarray(node_to_vertex, dtype=np.int64)
        if len(set(idx.tolist())) != len(idx):
            raise HierarchyError("node_to_vertex must be injective")
        e = np.sort(np.asarray(edges, dtype=np.int64).reshape(-1, 2), axis=1)
        if len(e) and (e[:, 0] == e[:, 1]).any():
            raise HierarchyError("graph edge connects a node to itself")
        e = np.unique(e, axis=0)
        f = np.zeros((0, 3), dtype=np.int64) if faces is None else np.asarray(faces, dtype=np.int64)
        return cls(mesh.vertices[idx].copy(), idx, e, f.reshape(-1, 3))


def greedy_assign(points, vertices):
    """Map each point, in order, to its closest vertex not yet taken."""
    vertices = np.asarray(vertices, dtype=np.float64)
    taken = np.zeros(len(vertices), dtype=bool)
    out = np.empty(len(points), dtype=np.int64)
    for i, p in enumerate(np.asarray(points, dtype=np.float64)):
        d = ((vertices - p) ** 2).sum(1)
        d[taken] = np.inf
        j = int(np.argmin(d))
        out[i] = j
        taken[j] = True
    return out


def extract_graph(mesh, target_nodes):
    """Decimate ``mesh`` to ``target_nodes`` nodes and snap them onto mesh vertices."""
    if not 4 <= target_nodes < mesh.n_vertices:
        raise HierarchyError(
            f"target_nodes must be in [4, {mesh.n_vertices}), got {target_nodes}")
    _, pos, faces, edges = simplify(mesh.vertices, mesh.faces, target_nodes, placement="optimal")
    node_to_vertex = greedy_assign(pos, mesh.vertices)
    return DeformationGraph.from_mesh(mesh, node_to_vertex, edges, faces)


@dataclass(frozen=True, eq=False)
class HierarchyLevel:
    """One resolution level and its links to the next finer level.

    ``select_indices[j]`` is the finer-level index of vertex ``j``.
    ``up_index``/``up_weight`` hold, per finer vertex, up to three coarse
    indices (-1 padded) and barycentric weights.
    ``mesh_indices`` maps every vertex back to the finest mesh.
    """

    mesh: Mesh
    select_indices: np.ndarray
    up_index: np.ndarray
    up_weight: np.ndarray
    mesh_indices: np.ndarray

    @property
    def n_vertices(self):
        return self.mesh.n_vertices

    @property
    def n_finer(self):
        return len(self.up_index)

    def up_rows(self):
        """Per finer vertex: list of (coarse index, weight) pairs."""
        return [[(int(i), float(w)) for i, w in zip(ri, rw) if i >= 0]
                for ri, rw in zip(self.up_index, self.up_weight)]

    def up_matrix(self):
        rows = np.repeat(np.arange(self.n_finer), 3)
        idx = self.up_index.reshape(-1)
        keep = idx >= 0
        return sparse.csr_matrix(
            (self.up_weight.reshape(-1)[keep], (rows[keep], idx[keep])),
            shape=(self.n_finer, self.n_vertices))


@dataclass(frozen=True, eq=False)
class MeshHierarchy:
    levels: list
    graph_level: object = None
    graph: object = None

    @property
    def level_counts(self):
        return [lv.n_vertices for lv in self.levels]

    def __len__(self):
        return len(self.levels)


def _identity_level(mesh):
    n = mesh.n_vertices
    idx = -np.ones((n, 3), dtype=np.int64)
    idx[:, 0] = np.arange(n)
    w = np.zeros((n, 3))
    w[:, 0] = 1.0
    return HierarchyLevel(mesh, np.arange(n), idx, w, np.arange(n))


def _up_weights(fine, coarse_mesh, select):
    n = fine.n_vertices
    up_idx = -np.ones((n, 3), dtype=np.int64)
    up_w = np.zeros((n, 3))
    survivor = -np.ones(n, dtype=np.int64)
    survivor[select] = np.arange(len(select))
    removed = np.flatnonzero(survivor < 0)
    up_idx[select, 0] = np.arange(len(select))
    up_w[select, 0] = 1.0
    if not len(removed):
        return up_idx, up_w
    pts = fine.vertices[removed]
    cv = coarse_mesh.vertices
    if len(coarse_mesh.faces):
        fidx, bary = kernels.closest_triangle(pts, cv, coarse_mesh.faces)
        bary = np.clip(bary, 0.0, None)
        bary = (bary / bary.sum(1, keepdims=True)).astype(np.float32).astype(np.float64)
        corners = coarse_mesh.faces[fidx]
        for r, i in enumerate(removed):
            j = 0
            for c, w in zip(corners[r], bary[r]):
                if w > 0:
                    up_idx[i, j] = c
                    up_w[i, j] = w
                    j += 1
    else:
        for i in removed:
            up_idx[i, 0] = int(np.argmin(((cv - fine.vertices[i]) ** 2).sum(1)))
            up_w[i, 0] = 1.0
    return up_idx, up_w


def graph_level_for(level_counts, node_count):
    if len(level_counts) > 1 and level_counts[1] == node_count:
        return 1
    if len(level_counts) > 2 and level_counts[2] == node_count:
        return 2
    raise HierarchyError(
        f"graph node count {node_count} must match level 1 or 2 of {list(level_counts)}")


def build_hierarchy(mesh, graph, level_counts):
    """Nested simplification levels that keep every graph node down to the graph level.

    At the graph level the vertex order follows graph node order and the
    level's faces are the graph's faces.
    """
    counts = [int(c) for c in level_counts]
    if not counts or counts[0] != mesh.n_vertices:
        raise HierarchyError(f"level_counts must start with the mesh vertex count {mesh.n_vertices}")
    if any(b >= a for a, b in zip(counts, counts[1:])):
        raise HierarchyError(f"level_counts must be strictly decreasing, got {counts}")
    if len(counts) == 1:
        return MeshHierarchy([_identity_level(mesh)], None, graph)
    if graph is None:
        raise HierarchyError("a deformation graph is required for multi-level hierarchies")
    g_level = graph_level_for(counts, graph.node_count)
    for k in range(1, g_level + 1):
        if graph.node_count > counts[k]:
            raise HierarchyError(
                f"{graph.node_count} graph nodes exceed level {k} target {counts[k]}")

    levels = [_identity_level(mesh)]
    for k in range(1, len(counts)):
        fine = levels[-1]
        protected = []
        if k <= g_level:
            pos_in_fine = {int(m): i for i, m in enumerate(fine.mesh_indices)}
            protected = [pos_in_fine[int(v)] for v in graph.node_to_vertex]
        kept, pos, faces, _ = simplify(fine.mesh.vertices, fine.mesh.faces, counts[k], protected)
        if k == g_level:
            pos_in_fine = {int(m): i for i, m in enumerate(fine.mesh_indices)}
            select = np.array([pos_in_fine[int(v)] for v in graph.node_to_vertex], dtype=np.int64)
            if set(select.tolist()) != set(kept.tolist()):
                raise HierarchyError("graph level does not coincide with the graph nodes")
            faces = np.asarray(graph.faces, dtype=np.int64)
            coarse = Mesh(fine.mesh.vertices[select], faces)
        else:
            select = kept
            coarse = Mesh(pos, faces)
        up_idx, up_w = _up_weights(fine.mesh, coarse, select)
        levels.append(HierarchyLevel(coarse, select, up_idx, up_w, fine.mesh_indices[select]))
    return MeshHierarchy(levels, g_level, graph)


def downsample(level, features):
    """Rows of the finer-level feature map that survive into ``level``."""
    features = np.asarray(features)
    if features.shape[-2] != level.n_finer:
        raise ValueError(f"expected {level.n_finer} rows, got {features.shape[-2]}")
    return features[..., level.select_indices, :]


def downsample_backward(level, grad):
    out = np.zeros(grad.shape[:-2] + (level.n_finer, grad.shape[-1]), dtype=grad.dtype)
    out[..., level.select_indices, :] = grad
    return out


def upsample(level, features):
    """Barycentric interpolation of coarse features onto the next finer level."""
    features = np.asarray(features)
    if features.shape[-2] != level.n_vertices:
        raise ValueError(f"expected {level.n_vertices} rows, got {features.shape[-2]}")
    idx = np.where(level.up_index < 0, 0, level.up_index)
    w = level.up_weight.astype(features.dtype)
    return np.einsum("nk,...nkf->...nf", w, features[..., idx, :])


def upsample_backward(level, grad):
    m = level.up_matrix().T.tocsr().astype(grad.dtype)
    lead = grad.shape[:-2]
    g = np.moveaxis(grad.reshape((-1,) + grad.shape[-2:]), 1, 0)  # (n_fine, B, F)
    out = (m @ g.reshape(g.shape[0], -1)).reshape(m.shape[0], -1, grad.shape[-1])
    return np.moveaxis(out, 0, 1).reshape(lead + (m.shape[0], grad.shape[-1]))


# -- serialization -----------------------------------------------------------

MANIFEST = "hierarchy.json"


def write_up_weights(path, level):
    rows = level.up_rows()
    buf = [struct.pack("<I", len(rows))]
    for row in rows:
        buf.append(struct.pack("<I", len(row)))
        for i, w in row:
            buf.append(struct.pack("<If", i, w))
    Path(path).write_bytes(b"".join(buf))


def read_up_weights(path):
    data = Path(path).read_bytes()
    (n,), off = struct.unpack_from("<I", data, 0), 4
    idx = -np.ones((n, 3), dtype=np.int64)
    w = np.zeros((n, 3))
    for r in range(n):
        (cnt,) = struct.unpack_from("<I", data, off)
        off += 4
        if cnt > 3:
            raise HierarchyError(f"{path}: row {r} has {cnt} entries")
        for j in range(cnt):
            i, wt = struct.unpack_from("<If", data, off)
            off += 8
            idx[r, j] = i
            w[r, j] = wt
    return idx, w


def save_hierarchy(hierarchy, out_dir, supports=None):
    """Write the manifest, one OBJ and one weight blob per level, and optional supports.

    ``supports`` maps level index to a dict with optional ``"spirals"`` and
    ``"laplacian"`` entries; they are written with ``demea.graph_conv``.
    """
    from .graph_conv import save_laplacian, save_spirals

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = hierarchy.graph
    manifest = {
        "format": "demea-hierarchy",
        "version": 1,
        "level_counts": hierarchy.level_counts,
        "graph_level": hierarchy.graph_level,
        "node_to_vertex": None if g is None else g.node_to_vertex.tolist(),
        "graph_edges": None if g is None else g.edges.tolist(),
        "graph_faces": None if g is None else g.faces.tolist(),
        "levels": [],
    }
    for k, lv in enumerate(hierarchy.levels):
        entry = {
            "obj": f"level_{k}.obj",
            "up_weights": f"level_{k}_up.bin",
            "select_indices": lv.select_indices.tolist(),
            "mesh_indices": lv.mesh_indices.tolist(),
        }
        save_mesh(lv.mesh, out / entry["obj"])
        write_up_weights(out / entry["up_weights"], lv)
        sup = (supports or {}).get(k, {})
        if sup.get("spirals") is not None:
            entry["spirals"] = f"level_{k}_spirals.bin"
            save_spirals(out / entry["spirals"], sup["spirals"])
        if sup.get("laplacian") is not None:
            entry["laplacian"] = f"level_{k}_laplacian.bin"
            save_laplacian(out / entry["laplacian"], sup["laplacian"])
        manifest["levels"].append(entry)
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out / MANIFEST


def load_hierarchy(path):
    """Read a hierarchy directory. Returns ``(hierarchy, supports)``."""
    from .graph_conv import load_laplacian, load_spirals

    root = Path(path)
    if root.is_file():
        root = root.parent
    manifest = json.loads((root / MANIFEST).read_text())
    levels, supports = [], {}
    for k, entry in enumerate(manifest["levels"]):
        mesh = load_mesh(root / entry["obj"])
        up_idx, up_w = read_up_weights(root / entry["up_weights"])
        levels.append(HierarchyLevel(
            mesh, np.array(entry["select_indices"], dtype=np.int64), up_idx, up_w,
            np.array(entry["mesh_indices"], dtype=np.int64)))
        sup = {}
        if "spirals" in entry:
            sup["spirals"] = load_spirals(root / entry["spirals"])
        if "laplacian" in entry:
            sup["laplacian"] = load_laplacian(root / entry["laplacian"])
        supports[k] = sup
    graph = None
    if manifest["node_to_vertex"] is not None:
        graph = DeformationGraph.from_mesh(
            levels[0].mesh, manifest["node_to_vertex"], manifest["graph_edges"],
            manifest["graph_faces"])
    return MeshHierarchy(levels, manifest["graph_level"], graph), supports


def check_hierarchy(hierarchy, tol=1e-6):
    """Raise ``HierarchyError`` if a structural invariant does not hold."""
    counts = hierarchy.level_counts
    if any(b >= a for a, b in zip(counts, counts[1:])):
        raise HierarchyError("level counts are not strictly decreasing")
    for k in range(1, len(hierarchy.levels)):
        lv, fine = hierarchy.levels[k], hierarchy.levels[k - 1]
        sel = lv.select_indices
        if len(set(sel.tolist())) != len(sel):
            raise HierarchyError(f"level {k}: select_indices not injective")
        if not np.array_equal(fine.mesh.vertices[sel], lv.mesh.vertices):
            raise HierarchyError(f"level {k}: positions differ from finer level")
        if not np.array_equal(fine.mesh_indices[sel], lv.mesh_indices):
            raise HierarchyError(f"level {k}: provenance differs from finer level")
        s = lv.up_weight.sum(1)
        if np.abs(s - 1).max() > tol or (lv.up_weight < 0).any():
            raise HierarchyError(f"level {k}: up weights not a partition of unity")
    g = hierarchy.graph
    if g is not None and hierarchy.graph_level is not None:
        for k in range(hierarchy.graph_level + 1):
            missing = set(g.node_to_vertex.tolist()) - set(hierarchy.levels[k].mesh_indices.tolist())
            if missing:
                raise HierarchyError(f"level {k}: graph nodes {sorted(missing)[:5]} removed")
    return True


__all__ = [
    "DeformationGraph", "HierarchyError", "HierarchyLevel", "MeshError", "MeshHierarchy",
    "build_hierarchy", "check_hierarchy", "downsample", "downsample_backward",
    "extract_graph", "greedy_assign", "load_hierarchy", "save_hierarchy", "simplify",
    "upsample", "upsample_backward",
]
