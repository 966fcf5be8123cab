"""Evaluation: iso-scallop deviation, path curvature and a geometric scallop oracle."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import diffops
from .diffops import CurvatureData
from .isocurve import IsoCurve
from .mesh import TriMesh

DEVIATION_BINS = np.r_[np.linspace(0.0, 0.10, 11), np.inf]
CURVATURE_BINS = np.r_[np.linspace(0.0, 0.5, 21), np.inf]


def _histogram(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # right-closed last finite bin goes into the overflow bin
    idx = np.searchsorted(edges, values, side="right") - 1
    idx = np.clip(idx, 0, len(edges) - 2)
    return np.bincount(idx, minlength=len(edges) - 1)


def histogram_csv(edges: np.ndarray, counts: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_low", "bin_high", "count"])
    for lo, hi, n in zip(edges[:-1], edges[1:], counts):
        w.writerow([repr(float(lo)), "inf" if math.isinf(hi) else repr(float(hi)), int(n)])
    return buf.getvalue()


@dataclass(frozen=True)
class DeviationStats:
    """Per-face ``|1 - |grad phi| / target|`` with fixed 1% bins and an overflow bin."""

    values: np.ndarray
    edges: np.ndarray
    counts: np.ndarray
    n_excluded: int
    mesh_checksum: str | None = None

    @property
    def n(self) -> int:
        return int(self.values.size)

    def fraction_above(self, x: float) -> float:
        return float(np.mean(self.values > x)) if self.n else 0.0

    def summary(self) -> dict:
        v = self.values
        return {
            "n_faces": self.n,
            "n_excluded": self.n_excluded,
            "mean": float(v.mean()) if self.n else None,
            "median": float(np.median(v)) if self.n else None,
            "max": float(v.max()) if self.n else None,
            "frac_gt_5pct": self.fraction_above(0.05),
            "frac_gt_10pct": self.fraction_above(0.10),
        }

    def to_dict(self) -> dict:
        return {
            "summary": self.summary(),
            "bins": [float(e) if np.isfinite(e) else "inf" for e in self.edges],
            "counts": self.counts.tolist(),
            "mesh_checksum": self.mesh_checksum,
        }

    def histogram_csv(self) -> str:
        return histogram_csv(self.edges, self.counts)


def deviation_values(mesh: TriMesh, phi, kappa_c: float, curvature: CurvatureData | None = None):
    """``(delta, excluded)`` per face; excluded faces (``ks + kc <= 0``) get NaN."""
    if curvature is None:
        curvature = diffops.curvature_tensor(mesh)
    g = (diffops.frame_gradient_operator(mesh) @ np.asarray(phi, dtype=float)).reshape(-1, 2)
    s = np.linalg.norm(g, axis=1)
    u = np.zeros_like(g)
    ok = s > 0
    u[ok] = g[ok] / s[ok, None]
    ks = np.einsum("fi,fij,fj->f", u, curvature.tensor, u)
    total = ks + kappa_c
    excluded = total <= 0
    delta = np.full(len(s), np.nan)
    t = np.sqrt(total[~excluded] / 8.0)
    delta[~excluded] = np.abs(1.0 - s[~excluded] / t)
    return delta, excluded


def deviation_stats(mesh: TriMesh, phi, kappa_c: float, curvature: CurvatureData | None = None) -> DeviationStats:
    delta, excluded = deviation_values(mesh, phi, kappa_c, curvature)
    v = delta[~excluded]
    return DeviationStats(v, DEVIATION_BINS.copy(), _histogram(v, DEVIATION_BINS), int(excluded.sum()), mesh.checksum())


@dataclass(frozen=True)
class CurvatureStats:
    """Path curvature ``sqrt(kg^2 + kn^2)`` sampled at every path point."""

    values: np.ndarray
    edges: np.ndarray
    counts: np.ndarray
    n_skipped: int
    kappa_g: np.ndarray = field(repr=False, default=None)
    kappa_n: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def summary(self) -> dict:
        v = self.values
        return {
            "n_samples": self.n,
            "n_skipped": self.n_skipped,
            "mean": float(v.mean()) if self.n else None,
            "median": float(np.median(v)) if self.n else None,
            "max": float(v.max()) if self.n else None,
        }

    def to_dict(self) -> dict:
        return {
            "summary": self.summary(),
            "bins": [float(e) if np.isfinite(e) else "inf" for e in self.edges],
            "counts": self.counts.tolist(),
        }

    def histogram_csv(self) -> str:
        return histogram_csv(self.edges, self.counts)


def _location_faces(mesh: TriMesh, p) -> np.ndarray:
    if p.kind == "vertex":
        return mesh.incident_faces(p.vertex)
    e = mesh.edge_index(*p.edge)
    f = mesh.edge_faces[e]
    return f[f >= 0]


def curvature_stats(
    mesh: TriMesh,
    phi,
    curves,
    curvature: CurvatureData | None = None,
    eps_g: float = 0.0,
) -> CurvatureStats:
    """Sample ``kn`` (mean over the faces touching each point) and ``kg``
    (interpolated from vertex values) along every curve point.

    Points touching a face with ``|grad phi| <= eps_g`` are skipped.
    """
    if curvature is None:
        curvature = diffops.curvature_tensor(mesh)
    phi = np.asarray(phi, dtype=float)
    if hasattr(curves, "curves"):
        curves = curves.curves
    g = (diffops.frame_gradient_operator(mesh) @ phi).reshape(-1, 2)
    s = np.linalg.norm(g, axis=1)
    flat = s <= eps_g
    u = np.zeros_like(g)
    u[~flat] = g[~flat] / s[~flat, None]
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    Tn = rot.T @ curvature.tensor @ rot
    kn_face = np.einsum("fi,fij,fj->f", u, Tn, u)
    kg_vert = diffops.kappa_g(mesh, phi, eps_g=max(eps_g, 1e-300))
    kgs, kns, skipped = [], [], 0
    for c in curves:
        for p in c.points:
            faces = _location_faces(mesh, p)
            if faces.size == 0 or flat[faces].any():
                skipped += 1
                continue
            if p.kind == "vertex":
                kg = kg_vert[p.vertex]
            else:
                a, b = p.edge
                kg = (1.0 - p.t) * kg_vert[a] + p.t * kg_vert[b]
            kgs.append(kg)
            kns.append(kn_face[faces].mean())
    kgs, kns = np.asarray(kgs), np.asarray(kns)
    k = np.sqrt(kgs**2 + kns**2)
    return CurvatureStats(k, CURVATURE_BINS.copy(), _histogram(k, CURVATURE_BINS), skipped, kgs, kns)


# -- scallop oracle ------------------------------------------------------------------

def closest_point_on_triangles(p: np.ndarray, A: np.ndarray, B: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Closest point to ``p`` on each triangle ``(A[k], B[k], C[k])`` (Voronoi-region test)."""
    p = np.broadcast_to(p, A.shape)
    ab, ac, ap = B - A, C - A, p - A
    d1, d2 = np.einsum("ij,ij->i", ab, ap), np.einsum("ij,ij->i", ac, ap)
    bp = p - B
    d3, d4 = np.einsum("ij,ij->i", ab, bp), np.einsum("ij,ij->i", ac, bp)
    cp = p - C
    d5, d6 = np.einsum("ij,ij->i", ab, cp), np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    out = np.empty_like(A)
    done = np.zeros(len(A), dtype=bool)

    def put(mask, val):
        m = mask & ~done
        out[m] = val[m]
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        put((d1 <= 0) & (d2 <= 0), A)
        put((d3 >= 0) & (d4 <= d3), B)
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), A + v[:, None] * ab)
        put((d6 >= 0) & (d5 <= d6), C)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), A + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), B + w[:, None] * (C - B))
        den = 1.0 / (va + vb + vc)
        v, w = vb * den, vc * den
        put(np.ones(len(A), dtype=bool), A + v[:, None] * ab + w[:, None] * ac)
    return out


class _SurfaceQuery:
    """Closest point on the mesh, exact over the k nearest faces by centroid."""

    def __init__(self, mesh: TriMesh, k: int = 24):
        self.mesh = mesh
        V, F = mesh.vertices, mesh.faces
        self.A, self.B, self.C = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
        self.tree = cKDTree((self.A + self.B + self.C) / 3.0)
        self.k = min(k, mesh.n_faces)

    def closest(self, x: np.ndarray) -> tuple[np.ndarray, int]:
        _, idx = self.tree.query(x, k=self.k)
        idx = np.atleast_1d(idx)
        q = closest_point_on_triangles(x, self.A[idx], self.B[idx], self.C[idx])
        d = np.linalg.norm(q - x, axis=1)
        j = int(np.argmin(d))
        return q[j], int(idx[j])


def _location_normal(mesh: TriMesh, p, vn: np.ndarray) -> np.ndarray:
    if p.kind == "vertex":
        n = vn[p.vertex]
    else:
        a, b = p.edge
        n = (1.0 - p.t) * vn[a] + p.t * vn[b]
    return n / np.linalg.norm(n)


def _closest_on_polyline(x: np.ndarray, P: np.ndarray, closed: bool):
    """Closest point to ``x`` on polyline ``P``: ``(point, segment, t)``."""
    Q = np.vstack([P, P[:1]]) if closed else P
    if len(Q) == 1:
        return Q[0], 0, 0.0
    a, b = Q[:-1], Q[1:]
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    t = np.where(dd > 0, np.einsum("ij,ij->i", x - a, d) / np.where(dd > 0, dd, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[:, None] * d
    k = int(np.argmin(np.linalg.norm(proj - x, axis=1)))
    return proj[k], k, float(t[k])


@dataclass(frozen=True)
class OracleResult:
    heights: np.ndarray
    spacing: np.ndarray
    samples: np.ndarray
    ridges: np.ndarray
    n_uncut: int
    radius: float

    def summary(self) -> dict:
        h = self.heights[np.isfinite(self.heights)]
        return {
            "n_samples": int(self.heights.size),
            "n_uncut": self.n_uncut,
            "mean": float(h.mean()) if h.size else None,
            "median": float(np.median(h)) if h.size else None,
            "max": float(h.max()) if h.size else None,
            "mean_spacing": float(np.mean(self.spacing)) if self.spacing.size else None,
            "cutter_radius": self.radius,
        }


def scallop_oracle(
    mesh: TriMesh,
    curve_a: IsoCurve,
    curve_b: IsoCurve,
    radius: float,
    samples: int | None = None,
    query: _SurfaceQuery | None = None,
) -> OracleResult:
    """Scallop height between two neighbouring passes by direct 3D geometry.

    For each sampled point ``p`` of ``curve_a`` the nearest point ``q`` of
    ``curve_b`` is found; balls of ``radius`` sit at ``p + r n(p)`` and
    ``q + r n(q)``. The ridge is the point of their intersection circle
    closest to the surface, and the scallop is its signed distance to the
    mesh along the local normal. Pairs with centres ``>= 2r`` apart leave
    uncut material and are reported as NaN.
    """
    vn = mesh.vertex_normals()
    query = query or _SurfaceQuery(mesh)
    Pb = curve_b.xyz
    idx = np.arange(len(curve_a))
    if samples is not None and samples < len(idx):
        idx = np.unique(np.linspace(0, len(idx) - 1, samples).round().astype(int))
    heights, spacing, ridges, pts = [], [], [], []
    uncut = 0
    r = float(radius)
    for i in idx.tolist():
        pa = curve_a.points[i]
        p = np.asarray(pa.position)
        q, k, t = _closest_on_polyline(p, Pb, curve_b.closed)
        nb = len(curve_b)
        la, lb = curve_b.points[k], curve_b.points[(k + 1) % nb]
        n_p = _location_normal(mesh, pa, vn)
        n_q = (1.0 - t) * _location_normal(mesh, la, vn) + t * _location_normal(mesh, lb, vn)
        n_q /= np.linalg.norm(n_q)
        c1, c2 = p + r * n_p, q + r * n_q
        d = float(np.linalg.norm(c2 - c1))
        spacing.append(float(np.linalg.norm(q - p)))
        pts.append(p)
        if d >= 2.0 * r:
            uncut += 1
            heights.append(np.nan)
            ridges.append(np.full(3, np.nan))
            continue
        n_mean = n_p + n_q
        n_mean /= np.linalg.norm(n_mean)
        mid = 0.5 * (c1 + c2)
        rho = math.sqrt(max(r * r - 0.25 * d * d, 0.0))
        down = -n_mean
        if d > 0:
            e = (c2 - c1) / d
            down = down - (down @ e) * e
            nd = np.linalg.norm(down)
            down = down / nd if nd > 0 else -n_mean
        ridge = mid + rho * down
        foot, f = query.closest(ridge)
        sign = 1.0 if (ridge - foot) @ mesh.face_normals[f] >= 0 else -1.0
        heights.append(sign * float(np.linalg.norm(ridge - foot)))
        ridges.append(ridge)
    return OracleResult(
        np.asarray(heights, dtype=float),
        np.asarray(spacing, dtype=float),
        np.asarray(pts, dtype=float).reshape(-1, 3),
        np.asarray(ridges, dtype=float).reshape(-1, 3),
        uncut,
        r,
    )


def exact_plane_scallop(w: float, radius: float) -> float:
    """Ridge height between two balls of ``radius`` a distance ``w`` apart on a plane."""
    if w >= 2 * radius:
        return math.inf
    return radius - math.sqrt(radius * radius - 0.25 * w * w)


# -- comparison --------------------------------------------------------------------

TAIL_THRESHOLDS = (0.05, 0.06, 0.07, 0.08, 0.09, 0.10)


def tail_dominates(a: DeviationStats, b: DeviationStats) -> bool:
    """``a`` has at least ``b``'s tail mass at every threshold and strictly more above 10%."""
    ge = all(a.fraction_above(x) >= b.fraction_above(x) for x in TAIL_THRESHOLDS)
    return ge and a.fraction_above(0.10) > b.fraction_above(0.10)


@dataclass
class Comparison:
    rows: list
    orderings: dict

    def to_dict(self) -> dict:
        return {"rows": self.rows, "orderings": self.orderings}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def table_csv(self) -> str:
        buf = io.StringIO()
        cols = ["label", "mean", "median", "max", "frac_gt_5pct", "frac_gt_10pct", "kappa_mean"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([r.get(c) for c in cols])
        return buf.getvalue()


def compare_fields(entries) -> Comparison:
    """Side-by-side summary of ``(label, DeviationStats, CurvatureStats | None)`` entries.

    ``orderings`` records, in entry order, whether Δ tail mass is
    non-decreasing and mean path curvature non-increasing, plus the
    pairwise tail-dominance matrix.
    """
    entries = list(entries)
    if len(entries) < 2:
        raise ValueError("need at least two labelled analyses to compare")
    sums = {e[1].mesh_checksum for e in entries}
    if len(sums) > 1:
        raise ValueError("analyses come from different meshes (checksum mismatch)")
    rows = []
    for label, dev, cur in entries:
        row = {"label": label, **dev.summary()}
        row["kappa_mean"] = cur.summary()["mean"] if cur is not None else None
        rows.append(row)
    tails = [e[1].fraction_above(0.10) for e in entries]
    tails5 = [e[1].fraction_above(0.05) for e in entries]
    kmeans = [r["kappa_mean"] for r in rows]
    orderings = {
        "tail10_nondecreasing": all(a <= b for a, b in zip(tails, tails[1:])),
        "tail5_nondecreasing": all(a <= b for a, b in zip(tails5, tails5[1:])),
        "kappa_mean_nonincreasing": None
        if any(k is None for k in kmeans)
        else all(a >= b for a, b in zip(kmeans, kmeans[1:])),
        "tail_dominates": {
            entries[i][0]: [entries[j][0] for j in range(len(entries)) if j != i and tail_dominates(entries[i][1], entries[j][1])]
            for i in range(len(entries))
        },
    }
    return Comparison(rows, orderings)
