"""Iso-level curve extraction by seed growth, and topology checks.

A vertex counts as *above* level ``l`` iff ``phi >= l``. This fixed
tie-break acts like an infinitesimal upward perturbation of vertices that
sit exactly on the level, so every face is crossed either not at all or on
exactly two edges, and curves through a vertex never branch.
"""

from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .mesh import MeshLocation, TriMesh

LEVEL_CLAMP = 1e-9


@dataclass(frozen=True)
class IsoCurve:
    """One connected component of ``{phi = level}``.

    ``faces[k]`` is the face containing segment ``points[k] -> points[k+1]``
    (for closed curves the last segment wraps to ``points[0]``).
    """

    level: float
    points: tuple
    closed: bool
    faces: np.ndarray
    field_id: str | None = None
    _xyz: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._xyz is None:
            object.__setattr__(self, "_xyz", np.array([p.position for p in self.points], dtype=float).reshape(-1, 3))

    @property
    def xyz(self) -> np.ndarray:
        return self._xyz

    def __len__(self):
        return len(self.points)

    @property
    def length(self) -> float:
        P = self.xyz
        if self.closed and len(P) > 1:
            P = np.vstack([P, P[:1]])
        return float(np.linalg.norm(np.diff(P, axis=0), axis=1).sum())

    def keys(self) -> list:
        return [_loc_key(p) for p in self.points]

    def to_dict(self) -> dict:
        pts = []
        for p in self.points:
            d = {"kind": p.kind, "xyz": list(p.position)}
            if p.kind == "vertex":
                d["vertex"] = p.vertex
            else:
                d["edge"] = list(p.edge)
                d["t"] = p.t
            pts.append(d)
        return {
            "level": self.level,
            "closed": self.closed,
            "field_id": self.field_id,
            "faces": self.faces.tolist(),
            "points": pts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IsoCurve":
        pts = []
        for p in d["points"]:
            pos = tuple(float(c) for c in p["xyz"])
            if p["kind"] == "vertex":
                pts.append(MeshLocation("vertex", vertex=int(p["vertex"]), position=pos))
            else:
                pts.append(MeshLocation("edge", edge=tuple(int(e) for e in p["edge"]), t=float(p["t"]), position=pos))
        return cls(float(d["level"]), tuple(pts), bool(d["closed"]), np.asarray(d.get("faces", []), dtype=np.int64), d.get("field_id"))


def _loc_key(p: MeshLocation) -> tuple:
    return ("v", p.vertex) if p.kind == "vertex" else ("e",) + tuple(p.edge)


def clamp_level(phi: np.ndarray, level: float) -> float | None:
    """Nudge a level equal to the field extremes inward; ``None`` if outside."""
    lo, hi = float(phi.min()), float(phi.max())
    if not lo <= level <= hi or hi == lo:
        return None
    pad = LEVEL_CLAMP * (hi - lo)
    return float(min(max(level, lo + pad), hi - pad))


def extract(mesh: TriMesh, phi, level: float, field_id: str | None = None) -> list[IsoCurve]:
    """All connected components of the level set, each traced once.

    Open components are traced from a boundary edge, closed ones from their
    lowest-index crossed edge; every curve is then oriented along
    ``normal x grad(phi)`` and closed curves start at their smallest
    location key, so the result does not depend on the scan order.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (mesh.n_vertices,):
        raise ValueError(f"expected {mesh.n_vertices} vertex values, got shape {phi.shape}")
    lv = clamp_level(phi, level)
    if lv is None:
        warnings.warn(
            f"level {level:g} outside field range [{phi.min():g}, {phi.max():g}]; no curves",
            RuntimeWarning,
            stacklevel=2,
        )
        return []
    above = phi >= lv
    E = mesh.edges
    crossed = above[E[:, 0]] != above[E[:, 1]]
    face_cross = crossed[mesh.face_edges]
    active_faces = np.flatnonzero(face_cross.any(axis=1))
    # each active face has exactly two crossed edges under the tie-break
    partner: dict[int, list] = defaultdict(list)
    for f in active_faces.tolist():
        a, b = mesh.face_edges[f][face_cross[f]].tolist()
        partner[a].append((f, b))
        partner[b].append((f, a))

    pa, pb = phi[E[:, 0]], phi[E[:, 1]]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        tvals = np.clip((lv - pa) / (pb - pa), 0.0, 1.0)

    visited = np.zeros(len(E), dtype=bool)
    curves = []
    cand = np.flatnonzero(crossed)
    # boundary starts first so open curves are traced end to end
    starts = [e for e in cand.tolist() if len(partner[e]) == 1] + cand.tolist()
    for e0 in starts:
        if visited[e0]:
            continue
        edges_seq, faces_seq, closed = _walk(e0, partner, visited)
        curves.append(_build_curve(mesh, phi, lv, edges_seq, faces_seq, closed, tvals, field_id))
    curves.sort(key=lambda c: c.keys()[0])
    return curves


def _walk(e0, partner, visited):
    visited[e0] = True
    edges_seq, faces_seq = [e0], []
    prev_face = None
    cur = e0
    while True:
        nxt = [(f, e) for f, e in partner[cur] if f != prev_face]
        if not nxt:
            return edges_seq, faces_seq, False
        f, e = nxt[0]
        if e == e0:
            faces_seq.append(f)
            return edges_seq, faces_seq, True
        faces_seq.append(f)
        edges_seq.append(e)
        visited[e] = True
        prev_face, cur = f, e


def _build_curve(mesh, phi, lv, edges_seq, faces_seq, closed, tvals, field_id) -> IsoCurve:
    E = mesh.edges
    pts = [MeshLocation.on_edge(mesh, int(E[e, 0]), int(E[e, 1]), float(tvals[e])) for e in edges_seq]
    faces = list(faces_seq)
    # collapse repeated vertex hits (consecutive edges sharing the hit vertex)
    keep_pts, keep_faces = [pts[0]], []
    for k in range(1, len(pts)):
        if _loc_key(pts[k]) == _loc_key(keep_pts[-1]):
            continue
        keep_pts.append(pts[k])
        keep_faces.append(faces[k - 1])
    if closed:
        keep_faces.append(faces[-1])
        while len(keep_pts) > 1 and _loc_key(keep_pts[-1]) == _loc_key(keep_pts[0]):
            keep_pts.pop()
            keep_faces.pop()
    pts, faces = keep_pts, keep_faces
    if _needs_reverse(mesh, phi, pts, faces):
        if closed:
            pts = [pts[0]] + pts[:0:-1]
            faces = faces[::-1]
        else:
            pts, faces = pts[::-1], faces[::-1]
    if closed and len(pts) > 1:
        keys = [_loc_key(p) for p in pts]
        s = keys.index(min(keys))
        pts = pts[s:] + pts[:s]
        faces = faces[s:] + faces[:s]
    return IsoCurve(float(lv), tuple(pts), bool(closed), np.asarray(faces, dtype=np.int64), field_id)


def _needs_reverse(mesh, phi, pts, faces) -> bool:
    from . import diffops

    n = len(pts)
    for k, f in enumerate(faces):
        a = np.asarray(pts[k].position)
        b = np.asarray(pts[(k + 1) % n].position)
        d = b - a
        if np.dot(d, d) == 0:
            continue
        g = diffops.gradient_operator(mesh)[3 * f : 3 * f + 3] @ phi
        along = np.cross(mesh.face_normals[f], g)
        return float(np.dot(d, along)) < 0
    return False


def extract_levels(mesh: TriMesh, phi, levels, field_id: str | None = None) -> list[list[IsoCurve]]:
    return [extract(mesh, phi, lv, field_id) for lv in levels]


# -- topology checks -------------------------------------------------------------

@dataclass
class TopologyReport:
    violations: list = field(default_factory=list)
    n_curves: int = 0
    # interior PL critical vertices of the field (informational: curves
    # away from a saddle's own level stay simple)
    critical: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind: str, message: str, **where):
        self.violations.append({"kind": kind, "message": message, **where})

    def to_dict(self) -> dict:
        return {"ok": self.ok, "n_curves": self.n_curves, "violations": self.violations, "critical": self.critical}


def _seg_dist(p0, p1, q0, q1) -> float:
    """Exact distance between 3D segments ``p0p1`` and ``q0q1``."""
    d1, d2, r = p1 - p0, q1 - q0, p0 - q0
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    if a <= 0 and e <= 0:
        return float(np.linalg.norm(r))
    if a <= 0:
        s, t = 0.0, np.clip(f / e, 0, 1)
    else:
        c = d1 @ r
        if e <= 0:
            t, s = 0.0, np.clip(-c / a, 0, 1)
        else:
            b = d1 @ d2
            den = a * e - b * b
            s = np.clip((b * f - c * e) / den, 0, 1) if den > 0 else 0.0
            t = (b * s + f) / e
            if t < 0:
                t, s = 0.0, np.clip(-c / a, 0, 1)
            elif t > 1:
                t, s = 1.0, np.clip((b - c) / a, 0, 1)
    return float(np.linalg.norm(p0 + d1 * s - (q0 + d2 * t)))


def critical_vertices(mesh: TriMesh, phi) -> dict:
    """Interior PL critical vertices: ``{vertex: 'max' | 'min' | 'saddle'}``.

    Counts sign changes of ``phi_j - phi_i`` around the one-ring (ties count
    as above, matching the extraction rule).
    """
    phi = np.asarray(phi, dtype=float)
    out = {}
    ring = _rings(mesh)
    for i in np.flatnonzero(~mesh.is_boundary_vertex).tolist():
        r = ring[i]
        if r is None:
            continue
        up = phi[r] >= phi[i]
        changes = int(np.count_nonzero(up != np.roll(up, 1)))
        if changes == 0:
            out[i] = "min" if up[0] else "max"
        elif changes >= 4:
            out[i] = "saddle"
    return out


def _rings(mesh: TriMesh) -> list:
    """Cyclically ordered one-ring of each interior vertex (cached)."""
    if "rings" in mesh._cache:
        return mesh._cache["rings"]
    nxt = [dict() for _ in range(mesh.n_vertices)]
    for a, b, c in mesh.faces.tolist():
        nxt[a][b] = c
        nxt[b][c] = a
        nxt[c][a] = b
    rings = []
    for i in range(mesh.n_vertices):
        m = nxt[i]
        if not m or mesh.is_boundary_vertex[i]:
            rings.append(None)
            continue
        start = min(m)
        seq, cur = [start], m[start]
        while cur != start and len(seq) <= len(m):
            seq.append(cur)
            cur = m[cur]
        rings.append(np.asarray(seq))
    mesh._cache["rings"] = rings
    return rings


def verify_topology(curves, mesh: TriMesh, phi=None, tol: float | None = None) -> TopologyReport:
    """Check endpoint, simplicity and disjointness guarantees of ``curves``.

    With ``phi`` the segment orientation is checked as well, and the field's
    interior critical vertices are listed in ``critical``; the level through
    a saddle is where curves can touch.
    """
    curves = [c for group in curves for c in (group if isinstance(group, list) else [group])]
    rep = TopologyReport(n_curves=len(curves))
    if tol is None:
        tol = 1e-12 * max(float(np.ptp(mesh.vertices, axis=0).max()), 1.0)
    bv = mesh.is_boundary_vertex
    bedge = set(map(tuple, mesh.edges[mesh.boundary_edges].tolist()))

    def on_boundary(p):
        return bv[p.vertex] if p.kind == "vertex" else tuple(sorted(p.edge)) in bedge

    seg_by_face = defaultdict(list)
    for ci, c in enumerate(curves):
        if len(c) == 0:
            rep.add("empty", "curve has no points", curve=ci)
            continue
        if not c.closed:
            for end, p in (("start", c.points[0]), ("end", c.points[-1])):
                if not on_boundary(p):
                    rep.add("open-end", f"curve {ci} {end} point is not on the boundary", curve=ci, location=list(_loc_key(p)))
        keys = c.keys()
        seen = {}
        for k, key in enumerate(keys):
            if key in seen:
                rep.add(
                    "self-intersection",
                    f"curve {ci} visits {key} twice (points {seen[key]} and {k})",
                    curve=ci,
                    location=list(key),
                    position=list(c.points[k].position),
                )
            seen.setdefault(key, k)
        P = c.xyz
        n = len(P)
        nseg = n if c.closed else n - 1
        for k in range(nseg):
            seg_by_face[int(c.faces[k])].append((ci, k, P[k], P[(k + 1) % n]))

    owner = {}
    for ci, c in enumerate(curves):
        for key, p in zip(c.keys(), c.points):
            other = owner.setdefault((c.level, key), ci)
            if other != ci:
                rep.add(
                    "touch",
                    f"curves {other} and {ci} (level {c.level:g}) meet at {key}",
                    curves=[other, ci],
                    location=list(key),
                    position=list(p.position),
                )

    # segments live inside faces, so only same-face pairs can meet
    for f, segs in seg_by_face.items():
        for i in range(len(segs)):
            ci, ki, a0, a1 = segs[i]
            for j in range(i + 1, len(segs)):
                cj, kj, b0, b1 = segs[j]
                if ci == cj:
                    if curves[ci].closed and abs(ki - kj) in (1, len(curves[ci]) - 1):
                        continue
                    if abs(ki - kj) == 1:
                        continue
                    rep.add("face-revisit", f"curve {ci} crosses face {f} twice", curve=ci, face=f)
                    continue
                same_level = curves[ci].level == curves[cj].level
                if same_level:
                    rep.add("face-shared", f"curves {ci} and {cj} (same level) both cross face {f}", curves=[ci, cj], face=f)
                elif _seg_dist(a0, a1, b0, b1) <= tol:
                    rep.add("intersection", f"curves {ci} and {cj} touch in face {f}", curves=[ci, cj], face=f)
    if phi is not None:
        from . import diffops

        phi = np.asarray(phi, dtype=float)
        grad = diffops.gradient(mesh, phi)
        along = np.cross(mesh.face_normals, grad)
        for ci, c in enumerate(curves):
            P = c.xyz
            n = len(P)
            nseg = n if c.closed else n - 1
            if nseg <= 0:
                continue
            d = np.roll(P, -1, axis=0)[:nseg] - P[:nseg]
            dots = np.einsum("ij,ij->i", d, along[c.faces[:nseg]])
            bad = np.flatnonzero(dots < -tol * np.linalg.norm(along[c.faces[:nseg]], axis=1))
            if bad.size:
                rep.add("orientation", f"curve {ci} runs against normal x grad(phi) on {bad.size} segment(s)", curve=ci)
        for v, kind in sorted(critical_vertices(mesh, phi).items()):
            rep.critical.append({"vertex": v, "position": mesh.vertices[v].tolist(), "critical": kind})
    return rep
