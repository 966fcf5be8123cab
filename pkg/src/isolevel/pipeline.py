"""Level scheduling, chord-tolerance simplification and tool-path export."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffops
from .diffops import CurvatureData
from .field import values_checksum
from .isocurve import IsoCurve, extract
from .mesh import TriMesh

ENDPOINT_OFFSET = 1e-6
MIN_INCREMENT = 1e-6


class ScheduleError(RuntimeError):
    """Adaptive scheduling stalled on a nearly flat stretch of the field."""


@dataclass(frozen=True)
class LevelSchedule:
    levels: np.ndarray
    kind: str
    h: float
    mode: str
    field_checksum: str | None = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if lv.size > 1 and np.any(np.diff(lv) <= 0):
            raise ValueError("schedule levels must be strictly increasing")
        object.__setattr__(self, "levels", lv)

    def __len__(self):
        return len(self.levels)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.levels)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "h": self.h,
            "mode": self.mode,
            "levels": self.levels.tolist(),
            "field_checksum": self.field_checksum,
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LevelSchedule":
        return cls(np.asarray(d["levels"], dtype=float), d["kind"], float(d["h"]), d["mode"], d.get("field_checksum"), dict(d.get("flags", {})))


def _range(phi) -> tuple[float, float]:
    phi = np.asarray(phi, dtype=float)
    lo, hi = float(phi.min()), float(phi.max())
    if not hi > lo:
        raise ValueError("field is constant; nothing to schedule")
    return lo, hi


def schedule_iso_scallop(phi, h: float, mode: str = "direction") -> LevelSchedule:
    """Levels ``phi_min + i*sqrt(h)``.

    Direction-parallel fields also get curves just inside both extremes
    (``phi_min + d`` and ``phi_max - d``, ``d = 1e-6 * range``), since the
    extreme level sets are boundary pieces. Contour-parallel schedules start
    at the boundary and stop at the last full step below ``phi_max``.
    """
    if not h > 0:
        raise ValueError(f"scallop height must be positive, got {h!r}")
    if mode not in ("direction", "contour"):
        raise ValueError(f"mode must be 'direction' or 'contour', got {mode!r}")
    lo, hi = _range(phi)
    span = hi - lo
    step = math.sqrt(h)
    delta = ENDPOINT_OFFSET * span
    ck = values_checksum(phi)
    if step >= span:
        warnings.warn(
            f"sqrt(h) = {step:g} covers the whole field range {span:g}; single pass",
            RuntimeWarning,
            stacklevel=2,
        )
        return LevelSchedule(np.array([lo + 0.5 * span]), "iso-scallop", h, mode, ck, {"single_level": True})
    n = int(math.floor(span / step))
    inner = lo + step * np.arange(1, n + 1)
    inner = inner[inner < hi - delta]
    levels = [lo + delta, *inner.tolist()]
    flags = {"first": "phi_min+delta", "delta": delta}
    if mode == "direction":
        levels.append(hi - delta)
        flags["last"] = "phi_max-delta"
    else:
        flags["last"] = "last step below phi_max"
    return LevelSchedule(np.asarray(levels), "iso-scallop", h, mode, ck, flags)


def _face_increments(mesh: TriMesh, phi, curvature: CurvatureData, h: float, kappa_c: float) -> np.ndarray:
    """Per-face level increment ``|g| * sqrt(8h / (ks + kc))`` (NaN if gouging)."""
    g = (diffops.frame_gradient_operator(mesh) @ phi).reshape(-1, 2)
    s = np.linalg.norm(g, axis=1)
    u = np.zeros_like(g)
    ok = s > 0
    u[ok] = g[ok] / s[ok, None]
    ks = np.einsum("fi,fij,fj->f", u, curvature.tensor, u)
    total = ks + kappa_c
    out = np.full(len(s), np.nan)
    good = total > 0
    out[good] = s[good] * np.sqrt(8.0 * h / total[good])
    return out


def schedule_adaptive(
    mesh: TriMesh,
    phi,
    curvature: CurvatureData | None,
    h: float,
    kappa_c: float,
    start: float | None = None,
    mode: str = "direction",
) -> LevelSchedule:
    """Next level = current level + smallest local increment along the curve.

    The first step is taken from ``phi_min`` (the seed level), so on a field
    that meets the iso-scallop target exactly the levels coincide with
    :func:`schedule_iso_scallop`.

    The increment at each sample is ``|grad phi| * w`` with the local
    scallop-limited interval ``w = sqrt(8h / (ks + kc))``; samples are the
    faces crossed by the current curves, i.e. every polyline segment.
    """
    if not h > 0:
        raise ValueError(f"scallop height must be positive, got {h!r}")
    phi = np.asarray(phi, dtype=float)
    if curvature is None:
        curvature = diffops.curvature_tensor(mesh)
    lo, hi = _range(phi)
    span = hi - lo
    delta = ENDPOINT_OFFSET * span
    inc = _face_increments(mesh, phi, curvature, h, kappa_c)
    level = lo + delta if start is None else float(start)
    # steps count from the extremum level set itself, not from the nudged copy
    base = lo if start is None else level
    levels = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        while level < hi:
            curves = extract(mesh, phi, level)
            if not curves:
                break
            levels.append(level)
            faces = np.concatenate([c.faces for c in curves])
            vals = inc[faces]
            vals = vals[np.isfinite(vals)]
            if vals.size == 0:
                raise ScheduleError(f"no usable samples on level {level:g} (all faces gouge)")
            step = float(vals.min())
            if step < MIN_INCREMENT * span:
                raise ScheduleError(
                    f"level increment {step:.3g} below {MIN_INCREMENT:g} x range at level {level:g}; "
                    "field is nearly flat along this curve"
                )
            level = base + step
            base = level
    flags = {"first": "phi_min+delta" if start is None else "given", "samples": "segment faces"}
    if mode == "direction" and levels and levels[-1] < hi - delta:
        levels.append(hi - delta)
        flags["last"] = "phi_max-delta"
    return LevelSchedule(np.asarray(levels), "adaptive-min-increment", h, mode, values_checksum(phi), flags)


# -- simplification ----------------------------------------------------------------

def _seg_point_dist(P: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    dd = float(d @ d)
    if dd == 0.0:
        return np.linalg.norm(P - a, axis=1)
    t = np.clip((P - a) @ d / dd, 0.0, 1.0)
    return np.linalg.norm(P - (a + t[:, None] * d), axis=1)


def simplify_indices(P: np.ndarray, closed: bool, tol: float) -> np.ndarray:
    """Indices kept by the greedy forward chord merge (first point always kept)."""
    P = np.asarray(P, dtype=float)
    n = len(P)
    if tol <= 0 or n <= 2:
        return np.arange(n)
    Q = np.vstack([P, P[:1]]) if closed else P
    m = len(Q)
    keep = [0]
    i = 0
    while i < m - 1:
        j = i + 1
        while j + 1 < m and np.all(_seg_point_dist(Q[i + 1 : j + 1], Q[i], Q[j + 1]) <= tol):
            j += 1
        keep.append(j)
        i = j
    if closed:
        keep = keep[:-1]
    return np.asarray(keep, dtype=np.int64)


def simplify(curve: IsoCurve, chord_tol: float) -> IsoCurve:
    """Drop points whose distance to the covering chord stays within ``chord_tol``.

    Kept points are a subset of the input; open-curve endpoints and the
    closed-curve seam are always kept. The result is a polygon, so its
    ``faces`` array is empty.
    """
    if len(curve) < 2:
        return curve
    idx = simplify_indices(curve.xyz, curve.closed, chord_tol)
    if len(idx) == len(curve):
        return curve
    pts = tuple(curve.points[k] for k in idx)
    return IsoCurve(curve.level, pts, curve.closed, np.empty(0, dtype=np.int64), curve.field_id)


def chord_errors(raw: IsoCurve, kept: np.ndarray) -> np.ndarray:
    """Distance of every skipped point to the chord that replaced it."""
    P = raw.xyz
    n = len(P)
    kept = list(kept)
    if raw.closed:
        kept = kept + [n]
        P = np.vstack([P, P[:1]])
    out = []
    for a, b in zip(kept[:-1], kept[1:]):
        if b - a > 1:
            out.append(_seg_point_dist(P[a + 1 : b], P[a], P[b]))
    return np.concatenate(out) if out else np.zeros(0)


# -- tool paths ------------------------------------------------------------------

@dataclass
class ToolPath:
    """Simplified curves in machining order plus the raw traced curves."""

    curves: list
    schedule: LevelSchedule
    config: dict = field(default_factory=dict)
    raw: list = field(default_factory=list)
    kept: list = field(default_factory=list)

    @property
    def levels(self) -> list:
        return [c.level for c in self.curves]

    def metadata(self) -> list:
        return [{"level": c.level, "length": c.length, "closed": c.closed, "n_points": len(c)} for c in self.curves]

    def n_points(self) -> int:
        return sum(len(c) for c in self.curves)

    def max_chord_error(self) -> float:
        errs = [chord_errors(r, k) for r, k in zip(self.raw, self.kept)]
        errs = [e for e in errs if e.size]
        return float(max(e.max() for e in errs)) if errs else 0.0


def build_toolpath(
    mesh: TriMesh,
    phi,
    schedule: LevelSchedule,
    chord_tol: float,
    config: dict | None = None,
    field_id: str | None = None,
) -> ToolPath:
    """Extract every scheduled level and simplify each curve."""
    phi = np.asarray(phi, dtype=float)
    raw, curves, kept = [], [], []
    for lv in schedule.levels:
        for c in extract(mesh, phi, float(lv), field_id):
            idx = simplify_indices(c.xyz, c.closed, chord_tol) if len(c) >= 2 else np.arange(len(c))
            raw.append(c)
            kept.append(idx)
            curves.append(simplify(c, chord_tol))
    return ToolPath(curves, schedule, dict(config or {}), raw, kept)


# -- export / import ---------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.6f}"


def toolpath_json(path: ToolPath) -> str:
    doc = {
        "format": "isolevel-toolpath",
        "version": 1,
        "config": path.config,
        "schedule": path.schedule.to_dict(),
        "curves": [dict(c.to_dict(), length=c.length) for c in path.curves],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def toolpath_csv(path: ToolPath) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["curve", "level", "x", "y", "z"])
    for ci, c in enumerate(path.curves):
        for x, y, z in c.xyz.tolist():
            w.writerow([ci, repr(c.level), repr(x), repr(y), repr(z)])
    return buf.getvalue()


def toolpath_gcode(path: ToolPath, clearance: float | None = None, feed: float | None = None) -> str:
    """Minimal RS-274: rapid to each curve start at safe height, feed moves through it.

    Points are surface contact points; no cutter compensation is applied.
    """
    cfg = path.config
    clearance = float(cfg.get("clearance", 5.0) if clearance is None else clearance)
    feed = float(cfg.get("feed", 600.0) if feed is None else feed)
    zs = [c.xyz[:, 2].max() for c in path.curves if len(c)]
    safe = (max(zs) if zs else 0.0) + clearance
    lines = [
        "; isolevel tool path",
        f"; kappa_c={cfg.get('kappa_c')} h={path.schedule.h} lambda={cfg.get('lam')} chord_tol={cfg.get('chord_tol')}",
        f"; schedule={path.schedule.kind} mode={path.schedule.mode} curves={len(path.curves)}",
        "G21",
        "G90",
        f"G0 Z{_fmt(safe)}",
    ]
    for c in path.curves:
        if len(c) == 0:
            continue
        P = c.xyz
        lines.append(f"; level {c.level!r}")
        lines.append(f"G0 X{_fmt(P[0, 0])} Y{_fmt(P[0, 1])} Z{_fmt(safe)}")
        lines.append(f"G1 X{_fmt(P[0, 0])} Y{_fmt(P[0, 1])} Z{_fmt(P[0, 2])} F{_fmt(feed)}")
        for x, y, z in P[1:].tolist():
            lines.append(f"G1 X{_fmt(x)} Y{_fmt(y)} Z{_fmt(z)}")
        if c.closed and len(P) > 1:
            lines.append(f"G1 X{_fmt(P[0, 0])} Y{_fmt(P[0, 1])} Z{_fmt(P[0, 2])}")
        lines.append(f"G0 Z{_fmt(safe)}")
    lines.append("M2")
    return "\n".join(lines) + "\n"


EXPORTERS = {"json": toolpath_json, "csv": toolpath_csv, "gcode": toolpath_gcode}


def export(path: ToolPath, out, fmt: str) -> None:
    fmt = fmt.lower()
    if fmt not in EXPORTERS:
        raise ValueError(f"unknown export format {fmt!r} (expected one of {sorted(EXPORTERS)})")
    Path(out).write_text(EXPORTERS[fmt](path), encoding="utf-8")


def load_toolpath_json(src) -> ToolPath:
    text = Path(src).read_text(encoding="utf-8") if not isinstance(src, str) or not src.lstrip().startswith("{") else src
    doc = json.loads(text)
    if doc.get("format") != "isolevel-toolpath":
        raise ValueError("not an isolevel tool-path document")
    curves = [IsoCurve.from_dict(c) for c in doc["curves"]]
    return ToolPath(curves, LevelSchedule.from_dict(doc["schedule"]), doc.get("config", {}))
