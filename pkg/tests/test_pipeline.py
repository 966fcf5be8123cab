import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import KAPPA_C, PLANE_TARGET, curvature, mesh, solved
from isolevel import pipeline
from isolevel.field import values_checksum
from isolevel.isocurve import IsoCurve
from isolevel.mesh import MeshLocation
from isolevel.pipeline import (
    LevelSchedule,
    ScheduleError,
    build_toolpath,
    chord_errors,
    load_toolpath_json,
    schedule_adaptive,
    schedule_iso_scallop,
    simplify,
    simplify_indices,
    toolpath_csv,
    toolpath_gcode,
    toolpath_json,
)


def polyline(P, closed=False, level=0.0):
    pts = tuple(MeshLocation("vertex", vertex=i, position=tuple(map(float, p))) for i, p in enumerate(P))
    return IsoCurve(level, pts, closed, np.zeros(0, dtype=np.int64))


def ngon(n, r=10.0):
    a = 2 * np.pi * np.arange(n) / n
    return np.column_stack([r * np.cos(a), r * np.sin(a), np.zeros(n)])


@pytest.fixture(scope="module")
def strip_exact():
    m = mesh("strip")
    return m, PLANE_TARGET * m.vertices[:, 0]


def test_strip_schedule_h1(strip_exact):
    _, phi = strip_exact
    s = schedule_iso_scallop(phi, 1.0, "direction")
    hi = phi.max()
    assert hi == pytest.approx(3.5355339, abs=1e-6)
    d = 1e-6 * hi
    assert np.allclose(s.levels, [d, 1, 2, 3, hi - d], rtol=0, atol=1e-12)
    assert np.array_equal(np.diff(s.levels[1:-1]), [1.0, 1.0])


def test_multiresolution_same_field(strip_exact):
    _, phi = strip_exact
    a, b = schedule_iso_scallop(phi, 1.0), schedule_iso_scallop(phi, 0.25)
    assert np.allclose(np.diff(b.levels[1:-1]), 0.5, rtol=0, atol=1e-12)
    assert a.field_checksum == b.field_checksum == values_checksum(phi)


def test_single_level_when_step_covers_range(strip_exact):
    _, phi = strip_exact
    with pytest.warns(RuntimeWarning, match="single pass"):
        s = schedule_iso_scallop(phi, 100.0)
    assert len(s) == 1 and s.flags["single_level"]
    assert phi.min() <= s.levels[0] <= phi.max()


def test_contour_schedule_stops_below_max(strip_exact):
    _, phi = strip_exact
    s = schedule_iso_scallop(phi, 1.0, "contour")
    assert np.allclose(s.levels, [1e-6 * phi.max(), 1, 2, 3], atol=1e-12)


def test_schedule_rejects_bad_input(strip_exact):
    _, phi = strip_exact
    with pytest.raises(ValueError):
        schedule_iso_scallop(phi, 0.0)
    with pytest.raises(ValueError):
        schedule_iso_scallop(np.ones(5), 1.0)
    with pytest.raises(ValueError, match="increasing"):
        LevelSchedule([0.0, 0.0], "iso-scallop", 1.0, "direction")


def test_adaptive_matches_iso_scallop_on_exact_field(strip_exact):
    m, phi = strip_exact
    a = schedule_adaptive(m, phi, curvature("strip"), 1.0, KAPPA_C)
    b = schedule_iso_scallop(phi, 1.0)
    assert len(a) == len(b)
    assert np.allclose(a.levels, b.levels, rtol=0, atol=1e-9)


def test_adaptive_cap_increments_near_sqrt_h():
    m = mesh("cap")
    phi, _ = solved("cap")
    s = schedule_adaptive(m, phi, curvature("cap"), 1.0, KAPPA_C, mode="contour")
    assert len(s) >= 3
    assert np.all(np.abs(s.increments - 1.0) <= 0.03)


@pytest.mark.slow
def test_adaptive_smooth_face_increments_bounded():
    m = mesh("face")
    phi, _ = solved("face", 10.0)
    s = schedule_adaptive(m, phi, curvature("face"), 1.0, KAPPA_C, mode="contour")
    inc = s.increments
    assert np.ptp(inc) > 0.01
    assert np.all(inc <= 1.0 + 1e-12)


def test_adaptive_stall_raises(strip_exact):
    m, _ = strip_exact
    x = m.vertices[:, 0]
    phi = np.where(x < 5, x, np.where(x < 10, 5 + 1e-9 * (x - 5), x - 5 + 5e-9))
    with pytest.raises(ScheduleError, match="nearly flat"):
        schedule_adaptive(m, phi, curvature("strip"), 1.0, KAPPA_C, start=5 + 2.5e-9)


def test_collinear_simplifies_to_endpoints():
    P = np.column_stack([np.linspace(0, 9, 10), np.zeros(10), np.zeros(10)])
    c = simplify(polyline(P), 1e-3)
    assert len(c) == 2
    assert np.array_equal(c.xyz, P[[0, -1]])


def test_ngon_sagitta():
    P = ngon(360)
    raw = polyline(P, closed=True)
    kept = simplify_indices(P, True, 0.01)
    # chords spanning 5 degrees have sagitta 10 (1 - cos 2.5deg) = 0.0095 <= 0.01
    assert len(kept) == 72
    assert chord_errors(raw, kept).max() <= 0.01
    out = simplify(raw, 0.01)
    assert {tuple(p) for p in out.xyz} <= {tuple(p) for p in P}


def test_zero_tolerance_keeps_curve():
    raw = polyline(ngon(50), closed=True)
    assert simplify(raw, 0.0) is raw


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), tol=st.floats(1e-4, 0.5), closed=st.booleans())
def test_simplify_brute_force(seed, tol, closed):
    rng = np.random.default_rng(seed)
    P = np.cumsum(rng.normal(size=(40, 3)) * 0.1, axis=0)
    raw = polyline(P, closed)
    kept = simplify_indices(P, closed, tol)
    assert kept[0] == 0 and np.all(np.diff(kept) > 0)
    if not closed:
        assert kept[-1] == len(P) - 1
    err = chord_errors(raw, kept)
    assert err.size == 0 or err.max() <= tol


def small_path():
    c = polyline([[0, 0, 0], [1, 0, 0.5], [2, 1, 0.25]], level=0.5)
    sched = LevelSchedule([0.5], "iso-scallop", 1.0, "direction")
    return pipeline.ToolPath([c], sched, {"kappa_c": 0.25, "lam": 0.0, "chord_tol": 0.01})


def test_csv_rows():
    head, *rows = toolpath_csv(small_path()).splitlines()
    assert head == "curve,level,x,y,z"
    assert len(rows) == 3
    assert rows[1].split(",") == ["0", "0.5", "1.0", "0.0", "0.5"]


def test_gcode_closed_square_returns_to_start():
    sq = polyline([[0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], closed=True)
    path = pipeline.ToolPath([sq], LevelSchedule([1.0], "iso-scallop", 1.0, "contour"), {})
    lines = toolpath_gcode(path).splitlines()
    g1 = [l for l in lines if l.startswith("G1")]
    assert len(g1) == 5
    assert g1[-1].split(" F")[0] == g1[0].split(" F")[0]
    assert lines[-1] == "M2" and "G21" in lines and "G90" in lines
    assert lines[-2] == "G0 Z6.000000"


def test_gcode_header_records_parameters():
    text = toolpath_gcode(small_path())
    assert "kappa_c=0.25" in text and "h=1.0" in text and "chord_tol=0.01" in text


def test_json_roundtrip(tmp_path, strip_exact):
    m, phi = strip_exact
    s = schedule_iso_scallop(phi, 0.25)
    tp = build_toolpath(m, phi, s, 0.01, {"kappa_c": 0.25}, "fid")
    p = tmp_path / "tp.json"
    pipeline.export(tp, p, "json")
    back = load_toolpath_json(p)
    assert back.levels == tp.levels
    assert np.allclose(back.schedule.levels, s.levels, rtol=0, atol=1e-12)
    for a, b in zip(back.curves, tp.curves):
        assert np.allclose(a.xyz, b.xyz, rtol=0, atol=1e-12)
        assert a.closed == b.closed and a.field_id == "fid"
    assert json.loads(toolpath_json(back))["curves"] == json.loads(toolpath_json(tp))["curves"]


def test_export_unknown_format(tmp_path):
    with pytest.raises(ValueError, match="unknown export format"):
        pipeline.export(small_path(), tmp_path / "x", "dxf")


def test_toolpath_on_strip(strip_exact):
    m, phi = strip_exact
    s = schedule_iso_scallop(phi, 1.0)
    tp = build_toolpath(m, phi, s, 0.01)
    assert tp.levels == pytest.approx(list(s.levels), abs=1e-12)
    # straight iso-lines collapse to their endpoints
    assert all(len(c) == 2 for c in tp.curves)
    assert tp.max_chord_error() <= 0.01


def test_toolpath_on_cap_chord_bound():
    m = mesh("cap")
    phi, _ = solved("cap")
    s = schedule_iso_scallop(phi, 0.25, "contour")
    tp = build_toolpath(m, phi, s, 0.01)
    assert tp.max_chord_error() <= 0.01
    assert tp.n_points() < sum(len(c) for c in tp.raw)
    for raw, kept, c in zip(tp.raw, tp.kept, tp.curves):
        assert np.array_equal(c.xyz, raw.xyz[kept])
