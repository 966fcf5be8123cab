import json
import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import PLANE_TARGET, mesh, solved
from isolevel import isocurve, meshgen
from isolevel.isocurve import IsoCurve, extract, verify_topology
from isolevel.mesh import TriMesh
from isolevel.optimize import BoundaryCondition, solve_laplacian_baseline


@pytest.fixture(scope="module")
def strip_linear():
    m = meshgen.rectangle(20.0, 10.0, 20, 10)
    return m, PLANE_TARGET * m.vertices[:, 0]


@pytest.fixture(scope="module")
def annulus_harmonic():
    m = meshgen.annulus(5.0, 10.0, 10)
    r = np.linalg.norm(m.vertices[:, :2], axis=1)
    inner, outer = sorted(m.boundary_loops, key=lambda l: r[l].mean())
    return m, solve_laplacian_baseline(m, BoundaryCondition(inner), high=outer)


def test_strip_midline_segment(strip_linear):
    m, phi = strip_linear
    (c,) = extract(m, phi, 0.5 * PLANE_TARGET * 20)
    assert not c.closed
    assert np.allclose(c.xyz[:, 0], 10.0, atol=1e-12)
    ends = sorted([c.xyz[0, 1], c.xyz[-1, 1]])
    assert np.allclose(ends, [0.0, 10.0], atol=1e-12)
    assert verify_topology([c], m, phi).ok


def test_strip_off_vertex_level(strip_linear):
    m, phi = strip_linear
    (c,) = extract(m, phi, PLANE_TARGET * 7.3)
    assert np.allclose(c.xyz[:, 0], 7.3, atol=1e-12)
    assert all(p.kind == "edge" for p in c.points)


def test_annulus_one_closed_loop(annulus_harmonic):
    m, phi = annulus_harmonic
    for level in (0.2, 0.5, 0.8):
        curves = extract(m, phi, level)
        assert len(curves) == 1 and curves[0].closed
        r = np.linalg.norm(curves[0].xyz[:, :2], axis=1)
        assert np.ptp(r) < 0.05 * r.mean()
        assert verify_topology(curves, m, phi).ok


def test_out_of_range_level_empty(strip_linear):
    m, phi = strip_linear
    with pytest.warns(RuntimeWarning, match="outside field range"):
        assert extract(m, phi, phi.min() - 1) == []


def test_level_clamped_at_extremes(strip_linear):
    m, phi = strip_linear
    lo, hi = phi.min(), phi.max()
    assert isocurve.clamp_level(phi, lo) == pytest.approx(lo + 1e-9 * (hi - lo), rel=0, abs=1e-15)
    assert isocurve.clamp_level(phi, hi) < hi
    (c,) = extract(m, phi, lo)
    assert np.allclose(c.xyz[:, 0], 0.0, atol=1e-6)


def test_points_interpolate_level(annulus_harmonic):
    m, phi = annulus_harmonic
    rng = np.ptp(phi)
    for c in extract(m, phi, 0.37):
        for p in c.points:
            if p.kind == "vertex":
                val = phi[p.vertex]
            else:
                a, b = p.edge
                val = (1 - p.t) * phi[a] + p.t * phi[b]
            assert abs(val - 0.37) <= 1e-12 * rng


def test_consecutive_points_share_their_face(annulus_harmonic):
    m, phi = annulus_harmonic
    (c,) = extract(m, phi, 0.6)
    n = len(c)
    for k in range(n):
        f = set(m.faces[c.faces[k]].tolist())
        for p in (c.points[k], c.points[(k + 1) % n]):
            verts = {p.vertex} if p.kind == "vertex" else set(p.edge)
            assert verts <= f


def test_each_edge_crossed_once(annulus_harmonic):
    m, phi = annulus_harmonic
    for level in np.linspace(0.05, 0.95, 7):
        keys = [k for c in extract(m, phi, level) for k in c.keys()]
        assert max(Counter(keys).values()) == 1


def test_vertex_exact_hits(strip_linear):
    m, phi = strip_linear
    level = float(phi[np.argmin(np.abs(m.vertices[:, 0] - 10.0))])
    (c,) = extract(m, phi, level)
    assert all(p.kind == "vertex" for p in c.points)
    assert len(c) == 11
    assert verify_topology([c], m, phi).ok


def test_independent_of_vertex_order(annulus_harmonic, rng):
    m, phi = annulus_harmonic
    perm = rng.permutation(m.n_vertices)
    inv = np.argsort(perm)
    m2 = TriMesh(m.vertices[perm], inv[m.faces][rng.permutation(m.n_faces)])
    (a,) = extract(m, phi, 0.45)
    (b,) = extract(m2, phi[perm], 0.45)
    pa = {tuple(np.round(x, 12)) for x in a.xyz}
    pb = {tuple(np.round(x, 12)) for x in b.xyz}
    assert pa == pb
    # same cyclic orientation: the successor of each point matches
    succ_a = {tuple(np.round(a.xyz[i], 12)): tuple(np.round(a.xyz[(i + 1) % len(a)], 12)) for i in range(len(a))}
    succ_b = {tuple(np.round(b.xyz[i], 12)): tuple(np.round(b.xyz[(i + 1) % len(b)], 12)) for i in range(len(b))}
    assert succ_a == succ_b


def test_orientation_normal_cross_gradient(annulus_harmonic):
    m, phi = annulus_harmonic
    (c,) = extract(m, phi, 0.5)
    # phi grows outward and normals point up, so curves run counter-clockwise
    x, y = c.xyz[:, 0], c.xyz[:, 1]
    signed_area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    assert signed_area > 0


def test_saddle_detected_and_localised():
    m = meshgen.disk(10.0, 10)
    P = m.vertices
    phi = P[:, 0] ** 2 - P[:, 1] ** 2
    centre = int(np.argmin(np.linalg.norm(P, axis=1)))
    rep = verify_topology(extract(m, phi, 0.0), m, phi)
    assert not rep.ok
    assert any(v["location"] == ["v", centre] for v in rep.violations)
    assert {"vertex": centre, "position": P[centre].tolist(), "critical": "saddle"} in rep.critical
    assert verify_topology(extract(m, phi, 5.0), m, phi).ok


def test_interior_extremum_reported():
    m = meshgen.disk(10.0, 10)
    phi = np.linalg.norm(m.vertices, axis=1) ** 2
    centre = int(np.argmin(phi))
    assert isocurve.critical_vertices(m, phi) == {centre: "min"}


def test_open_end_off_boundary_flagged(strip_linear):
    m, phi = strip_linear
    (c,) = extract(m, phi, PLANE_TARGET * 7.3)
    cut = IsoCurve(c.level, c.points[:-2], False, c.faces[:-2], c.field_id)
    kinds = [v["kind"] for v in verify_topology([cut], m).violations]
    assert kinds == ["open-end"]


def test_repeated_point_flagged(annulus_harmonic):
    m, phi = annulus_harmonic
    (c,) = extract(m, phi, 0.5)
    pts = c.points + c.points[:1]
    bad = IsoCurve(c.level, pts, True, np.concatenate([c.faces, c.faces[:1]]), None)
    assert "self-intersection" in [v["kind"] for v in verify_topology([bad], m).violations]


def test_crossing_curves_of_distinct_levels_flagged(strip_linear):
    m, phi = strip_linear
    (a,) = extract(m, phi, PLANE_TARGET * 5.5)
    (b,) = extract(m, PLANE_TARGET * m.vertices[:, 1] * 2, PLANE_TARGET * 2 * 4.5)
    kinds = {v["kind"] for v in verify_topology([a, b], m).violations}
    assert "intersection" in kinds


def test_roundtrip_dict(annulus_harmonic):
    m, phi = annulus_harmonic
    (c,) = extract(m, phi, 0.5, field_id="abc")
    d = json.loads(json.dumps(c.to_dict()))
    c2 = IsoCurve.from_dict(d)
    assert c2.keys() == c.keys() and c2.closed and c2.field_id == "abc"
    assert np.allclose(c2.xyz, c.xyz, rtol=0, atol=1e-12)
    assert c2.length == pytest.approx(c.length, rel=1e-12)


def test_optimised_field_curves_clean():
    m = mesh("cap")
    phi, _ = solved("cap")
    levels = np.linspace(phi.min(), phi.max(), 9)[1:-1]
    rep = verify_topology(isocurve.extract_levels(m, phi, levels), m, phi)
    assert rep.ok, rep.violations[:3]
    assert rep.n_curves == 7


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), a=st.floats(-1, 1), b=st.floats(-1, 1), frac=st.floats(0.05, 0.95))
def test_linear_fields_always_clean(seed, a, b, frac):
    if abs(a) + abs(b) < 1e-3:
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = meshgen.random_planar(60, 5.0, seed=seed)
    phi = a * m.vertices[:, 0] + b * m.vertices[:, 1]
    level = phi.min() + frac * np.ptp(phi)
    curves = extract(m, phi, level)
    assert curves
    rep = verify_topology(curves, m, phi)
    assert rep.ok, rep.violations
