"""Triangle mesh container, loaders and static geometry.

Everything downstream (differential operators, the field energy, iso-curve
tracing) reads geometry from a :class:`TriMesh`. The mesh is built once,
validated, and its arrays are frozen.
"""

from __future__ import annotations

import hashlib
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)

DEGENERATE_AREA_RATIO = 1e-12


class MeshError(ValueError):
    """Raised for unreadable or invalid meshes.

    ``index`` names the offending element (face, edge or vertex) when known.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class TriMesh:
    """Immutable, indexed triangle mesh (units: mm).

    Parameters
    ----------
    vertices : (V, 3) array_like
    faces : (F, 3) array_like of int
        Counter-clockwise vertex triples; orientation must be consistent
        across shared edges.

    Attributes
    ----------
    face_normals, face_areas : per-face unit normal and area.
    face_edge_vectors : (F, 3, 3) edge vector opposite each corner,
        ``e_j = x_{j+2} - x_{j+1}`` (counter-clockwise).
    edges : (E, 2) sorted vertex pairs.
    face_edges : (F, 3) index into ``edges`` of the edge opposite each corner.
    edge_faces : (E, 2) incident faces, ``-1`` for the missing side.
    dual_areas : (V,) barycentric dual-cell areas.
    boundary_loops : list of (k,) vertex cycles, surface on the left.
    """

    def __init__(self, vertices, faces):
        V = np.asarray(vertices, dtype=float)
        F = np.asarray(faces, dtype=np.int64)
        if V.ndim != 2 or V.shape[1] != 3:
            raise MeshError(f"vertices must have shape (V, 3), got {V.shape}")
        if F.ndim != 2 or F.shape[1] != 3:
            raise MeshError(f"faces must have shape (F, 3), got {F.shape}")
        if len(F) == 0:
            raise MeshError("mesh has no faces")
        if not np.all(np.isfinite(V)):
            bad = int(np.argwhere(~np.isfinite(V))[0, 0])
            raise MeshError(f"vertex {bad} has a non-finite coordinate", bad)
        if F.min() < 0 or F.max() >= len(V):
            bad = int(np.argwhere((F < 0) | (F >= len(V)))[0, 0])
            raise MeshError(f"face {bad} references a missing vertex", bad)
        rep = (F[:, 0] == F[:, 1]) | (F[:, 1] == F[:, 2]) | (F[:, 0] == F[:, 2])
        if rep.any():
            bad = int(np.argmax(rep))
            raise MeshError(f"face {bad} repeats a vertex", bad)

        self.vertices = _frozen(V)
        self.faces = _frozen(F)
        self._cache: dict = {}

        x0, x1, x2 = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
        e = np.stack([x2 - x1, x0 - x2, x1 - x0], axis=1)
        cr = np.cross(x1 - x0, x2 - x0)
        dbl = np.linalg.norm(cr, axis=1)
        areas = 0.5 * dbl
        mean_area = areas.mean()
        degenerate = areas <= DEGENERATE_AREA_RATIO * mean_area
        if degenerate.any():
            bad = int(np.argmax(degenerate))
            raise MeshError(f"face {bad} is degenerate (area {areas[bad]:.3e})", bad)
        self.face_areas = _frozen(areas)
        self.face_normals = _frozen(cr / dbl[:, None])
        self.face_edge_vectors = _frozen(e)

        self._build_edges()
        self.dual_areas = _frozen(dual_cell_areas(self))
        self.boundary_loops = [_frozen(loop) for loop in boundary_loops(self)]

    # -- topology -------------------------------------------------------
    def _build_edges(self):
        F = self.faces
        nf = len(F)
        # corner j's opposite edge runs (j+1) -> (j+2)
        a = F[:, [1, 2, 0]].ravel()
        b = F[:, [2, 0, 1]].ravel()
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        key = lo * len(self.vertices) + hi
        uniq, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
        if counts.max() > 2:
            bad = int(np.argmax(counts > 2))
            raise MeshError(f"edge {bad} is shared by {counts[bad]} faces (non-manifold)", bad)
        edges = np.stack([uniq // len(self.vertices), uniq % len(self.vertices)], axis=1)
        face_edges = inv.reshape(nf, 3)
        edge_faces = -np.ones((len(edges), 2), dtype=np.int64)
        edge_dir = np.zeros((len(edges), 2), dtype=np.int64)
        fidx = np.repeat(np.arange(nf), 3)
        forward = (a < b).astype(np.int64)
        order = np.argsort(inv, kind="stable")
        slot = np.zeros(len(inv), dtype=np.int64)
        sorted_inv = inv[order]
        first = np.r_[True, sorted_inv[1:] != sorted_inv[:-1]]
        slot[order[~first]] = 1
        edge_faces[inv, slot] = fidx
        edge_dir[inv, slot] = forward
        shared = counts == 2
        same = shared & (edge_dir[:, 0] == edge_dir[:, 1])
        if same.any():
            bad = int(np.argmax(same))
            raise MeshError(f"edge {bad} joins two faces with opposite orientation", bad)
        self.edges = _frozen(edges)
        self.face_edges = _frozen(face_edges)
        self.edge_faces = _frozen(edge_faces)
        bedge = edge_faces[:, 1] < 0
        self.boundary_edges = _frozen(np.flatnonzero(bedge))
        bv = np.zeros(len(self.vertices), dtype=bool)
        bv[edges[bedge].ravel()] = True
        self.is_boundary_vertex = _frozen(bv)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    @property
    def is_closed(self) -> bool:
        return len(self.boundary_edges) == 0

    @property
    def total_area(self) -> float:
        return math.fsum(self.face_areas)

    def vertex_face_matrix(self) -> sparse.csr_matrix:
        """(V, F) incidence matrix; row ``i`` lists D1(i)."""
        if "vf" not in self._cache:
            F = self.faces
            rows = F.ravel()
            cols = np.repeat(np.arange(len(F)), 3)
            m = sparse.csr_matrix(
                (np.ones(len(rows)), (rows, cols)), shape=(self.n_vertices, self.n_faces)
            )
            self._cache["vf"] = m
        return self._cache["vf"]

    def incident_faces(self, i: int) -> np.ndarray:
        m = self.vertex_face_matrix()
        return m.indices[m.indptr[i] : m.indptr[i + 1]]

    def neighbors(self, i: int) -> np.ndarray:
        """1-ring neighbour set N1(i)."""
        E = self.edges
        return np.unique(np.r_[E[E[:, 0] == i, 1], E[E[:, 1] == i, 0]])

    def vertex_normals(self, weighting: str = "max") -> np.ndarray:
        """Unit vertex normals.

        ``"max"`` weights each corner's ``e1 x e2`` by ``1/(|e1|^2 |e2|^2)``
        (exact when the 1-ring lies on a sphere); ``"area"`` averages face
        normals by face area.
        """
        key = f"vn_{weighting}"
        if key not in self._cache:
            if weighting == "area":
                w = self.face_normals * self.face_areas[:, None]
                n = self.vertex_face_matrix() @ w
            elif weighting == "max":
                F, X = self.faces, self.vertices
                n = np.zeros_like(X)
                for c in range(3):
                    i, j, k = F[:, c], F[:, (c + 1) % 3], F[:, (c + 2) % 3]
                    e1, e2 = X[j] - X[i], X[k] - X[i]
                    w = np.cross(e1, e2) / (np.einsum("ij,ij->i", e1, e1) * np.einsum("ij,ij->i", e2, e2))[:, None]
                    for d in range(3):
                        n[:, d] += np.bincount(i, weights=w[:, d], minlength=len(X))
            else:
                raise ValueError(f"unknown normal weighting {weighting!r}")
            n /= np.linalg.norm(n, axis=1)[:, None]
            self._cache[key] = _frozen(n)
        return self._cache[key]

    def mean_edge_length(self) -> float:
        E = self.edges
        return float(np.linalg.norm(self.vertices[E[:, 0]] - self.vertices[E[:, 1]], axis=1).mean())

    def edge_index(self, a: int, b: int) -> int:
        """Index of the edge joining ``a`` and ``b`` (KeyError if absent)."""
        if "edge_lookup" not in self._cache:
            n = self.n_vertices
            keys = self.edges[:, 0] * n + self.edges[:, 1]
            self._cache["edge_lookup"] = dict(zip(keys.tolist(), range(len(keys))))
        lo, hi = min(a, b), max(a, b)
        return self._cache["edge_lookup"][lo * self.n_vertices + hi]

    def checksum(self) -> str:
        """SHA-256 over the vertex and face buffers."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.faces, dtype="<i8").tobytes())
        return h.hexdigest()

    def __repr__(self):
        return (
            f"TriMesh(V={self.n_vertices}, F={self.n_faces}, "
            f"boundary_loops={len(self.boundary_loops)})"
        )


@dataclass(frozen=True)
class MeshLocation:
    """A point on the mesh: a vertex, or a point strictly inside an edge.

    For edge locations ``edge = (a, b)`` and ``position = (1-t) x_a + t x_b``.
    """

    kind: str
    vertex: int | None = None
    edge: tuple[int, int] | None = None
    t: float | None = None
    position: tuple[float, float, float] | None = None

    @classmethod
    def on_vertex(cls, mesh: TriMesh, i: int) -> "MeshLocation":
        return cls("vertex", vertex=int(i), position=tuple(mesh.vertices[i].tolist()))

    @classmethod
    def on_edge(cls, mesh: TriMesh, a: int, b: int, t: float) -> "MeshLocation":
        if t <= 0.0:
            return cls.on_vertex(mesh, a)
        if t >= 1.0:
            return cls.on_vertex(mesh, b)
        p = (1.0 - t) * mesh.vertices[a] + t * mesh.vertices[b]
        return cls("edge", edge=(int(a), int(b)), t=float(t), position=tuple(p.tolist()))


def dual_cell_areas(mesh: TriMesh) -> np.ndarray:
    """Barycentric dual-cell area per vertex: a third of each incident face."""
    F = mesh.faces
    third = np.repeat(mesh.face_areas / 3.0, 3)
    return np.bincount(F.ravel(), weights=third, minlength=mesh.n_vertices)


def boundary_loops(mesh: TriMesh) -> list[np.ndarray]:
    """Ordered boundary cycles with the surface on the left of travel.

    Raises :class:`MeshError` when a boundary vertex has more than one
    outgoing boundary edge (bow-tie vertex), which makes the chain ambiguous.
    """
    F = mesh.faces
    nxt: dict[int, int] = {}
    for e in mesh.boundary_edges.tolist():
        f = int(mesh.edge_faces[e, 0])
        a, b = mesh.edges[e]
        tri = F[f].tolist()
        ia = tri.index(a)
        # keep the face's own direction so the face is on the left
        if tri[(ia + 1) % 3] != b:
            a, b = b, a
        a, b = int(a), int(b)
        if a in nxt:
            raise MeshError(f"vertex {a} has two outgoing boundary edges (open boundary chain)", a)
        nxt[a] = b
    loops = []
    seen: set[int] = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        v = nxt[start]
        while v != start:
            if v in seen or v not in nxt:
                raise MeshError(f"boundary chain through vertex {v} does not close", v)
            loop.append(v)
            seen.add(v)
            v = nxt[v]
        loops.append(np.array(loop, dtype=np.int64))
    return loops


# -- file formats -----------------------------------------------------------

def _warn_ignored(kinds: set[str], fmt: str, path) -> None:
    if kinds:
        warnings.warn(
            f"{path}: ignored {fmt} records: {', '.join(sorted(kinds))}", RuntimeWarning, stacklevel=3
        )


def _fan(poly: list[int]) -> list[list[int]]:
    return [[poly[0], poly[k], poly[k + 1]] for k in range(1, len(poly) - 1)]


def read_off(path) -> TriMesh:
    tokens: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens or not tokens[0].endswith("OFF"):
        raise MeshError(f"{path}: missing OFF header")
    if tokens[0] != "OFF":
        raise MeshError(f"{path}: unsupported OFF variant {tokens[0]!r}")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4
        verts = np.array(tokens[pos : pos + 3 * nv], dtype=float).reshape(nv, 3)
        pos += 3 * nv
        faces = []
        for fi in range(nf):
            k = int(tokens[pos])
            poly = [int(x) for x in tokens[pos + 1 : pos + 1 + k]]
            if len(poly) != k or k < 3:
                raise MeshError(f"{path}: face {fi} is malformed", fi)
            faces.extend(_fan(poly))
            pos += 1 + k
    except (IndexError, ValueError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"{path}: truncated or malformed OFF body ({exc})") from None
    return TriMesh(verts, np.array(faces, dtype=np.int64))


def read_obj(path) -> TriMesh:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    ignored: set[str] = set()
    nface = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            tag = parts[0]
            if tag == "v":
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshError(f"{path}:{lineno}: bad vertex record") from None
                if len(verts[-1]) != 3:
                    raise MeshError(f"{path}:{lineno}: vertex needs 3 coordinates")
            elif tag == "f":
                poly = []
                for tok in parts[1:]:
                    try:
                        idx = int(tok.split("/")[0])
                    except ValueError:
                        raise MeshError(f"{path}:{lineno}: face {nface} has bad index {tok!r}", nface) from None
                    if idx == 0:
                        raise MeshError(
                            f"{path}:{lineno}: face {nface} uses index 0 (OBJ indices are 1-based)", nface
                        )
                    poly.append(idx - 1 if idx > 0 else len(verts) + idx)
                if len(poly) < 3:
                    raise MeshError(f"{path}:{lineno}: face {nface} has fewer than 3 vertices", nface)
                if max(poly) >= len(verts) or min(poly) < 0:
                    raise MeshError(f"{path}:{lineno}: face {nface} references a missing vertex", nface)
                faces.extend(_fan(poly))
                nface += 1
            else:
                ignored.add(tag)
    _warn_ignored(ignored, "OBJ", path)
    if not faces:
        raise MeshError(f"{path}: no faces")
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64))


def read_stl_ascii(path, weld_tol: float = 0.0) -> TriMesh:
    """ASCII STL; vertices are welded by exact coordinate match.

    ``weld_tol > 0`` additionally merges vertices closer than ``weld_tol``.
    """
    corners: list[list[float]] = []
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().split()
        if not first or first[0] != "solid":
            raise MeshError(f"{path}: not an ASCII STL file")
        for lineno, line in enumerate(fh, 2):
            parts = line.split()
            if parts and parts[0] == "vertex":
                try:
                    corners.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshError(f"{path}:{lineno}: bad vertex record") from None
    if not corners or len(corners) % 3:
        raise MeshError(f"{path}: facet vertex count {len(corners)} is not a multiple of 3")
    pts = np.array(corners)
    if weld_tol > 0:
        from scipy.spatial import cKDTree

        pairs = cKDTree(pts).query_pairs(weld_tol, output_type="ndarray")
        g = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(pts),) * 2)
        _, labels = sparse.csgraph.connected_components(g, directed=False)
        _, first_idx, inv = np.unique(labels, return_index=True, return_inverse=True)
        verts = pts[first_idx]
    else:
        verts, inv = np.unique(pts, axis=0, return_inverse=True)
    faces = np.asarray(inv).reshape(-1, 3)
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    if not keep.all():
        bad = int(np.argmin(keep))
        raise MeshError(f"{path}: facet {bad} collapses after welding", bad)
    return TriMesh(verts, faces)


_READERS = {"off": read_off, "obj": read_obj, "stl": read_stl_ascii}


def load_mesh(path, format: str | None = None) -> TriMesh:
    """Load OFF, OBJ (v/f records) or ASCII STL; format defaults to the suffix."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower().replace("stl-ascii", "stl")
    if fmt not in _READERS:
        raise MeshError(f"{path}: unsupported mesh format {fmt!r}")
    if not path.exists():
        raise MeshError(f"{path}: file not found")
    mesh = _READERS[fmt](path)
    logger.info("loaded %s: %r", path, mesh)
    return mesh


def write_off(mesh: TriMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"OFF\n{mesh.n_vertices} {mesh.n_faces} 0\n")
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
        for a, b, c in mesh.faces.tolist():
            fh.write(f"3 {a} {b} {c}\n")


def write_obj(mesh: TriMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in mesh.faces.tolist():
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def write_stl_ascii(mesh: TriMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("solid mesh\n")
        V = mesh.vertices.tolist()
        for n, tri in zip(mesh.face_normals.tolist(), mesh.faces.tolist()):
            fh.write(f"  facet normal {n[0]!r} {n[1]!r} {n[2]!r}\n    outer loop\n")
            for v in tri:
                x, y, z = V[v]
                fh.write(f"      vertex {x!r} {y!r} {z!r}\n")
            fh.write("    endloop\n  endfacet\n")
        fh.write("endsolid mesh\n")


def dump_field_csv(values, path, header: str = "value") -> None:
    """Write a per-element field as ``index,value[,value...]`` rows."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    cols = [header] if arr.shape[1] == 1 else [f"{header}_{k}" for k in range(arr.shape[1])]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index," + ",".join(cols) + "\n")
        for i, row in enumerate(arr):
            fh.write(f"{i}," + ",".join(repr(float(x)) for x in row) + "\n")
