import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isolevel import analysis, diffops, isocurve, meshgen
from isolevel.diffops import DegenerateGradientError
from isolevel.mesh import TriMesh


def planar(n=150, seed=0):
    return meshgen.random_planar(n, 10.0, seed=seed)


def test_gradient_exact_for_linear_fields():
    m = planar()
    x, y = m.vertices[:, 0], m.vertices[:, 1]
    g = diffops.gradient(m, 3 * x + 2 * y)
    assert np.allclose(g, [3, 2, 0], rtol=0, atol=1e-12)
    assert np.allclose(diffops.gradient(m, np.full(m.n_vertices, 4.2)), 0, atol=1e-13)


def test_gradient_matches_plane_fit_for_quadratic():
    m = planar(seed=4)
    phi = m.vertices[:, 0] ** 2
    g = diffops.gradient(m, phi)
    for f in range(0, m.n_faces, 7):
        P = m.vertices[m.faces[f], :2]
        M = np.column_stack([P, np.ones(3)])
        a, b, _ = np.linalg.solve(M, phi[m.faces[f]])
        assert np.allclose(g[f], [a, b, 0], rtol=1e-10, atol=1e-10)


def test_gradient_is_tangent():
    m = meshgen.icosphere(10.0, 2)
    phi = np.sin(m.vertices[:, 0]) + m.vertices[:, 2] ** 2
    g = diffops.gradient(m, phi)
    dots = np.abs(np.einsum("fi,fi->f", g, m.face_normals))
    assert np.all(dots <= 1e-9 * np.maximum(np.linalg.norm(g, axis=1), 1e-300))


def test_gradient_linear_in_phi(rng):
    m = planar(seed=2)
    a, b = rng.normal(size=(2, m.n_vertices))
    assert np.allclose(diffops.gradient(m, 2 * a - b), 2 * diffops.gradient(m, a) - diffops.gradient(m, b))


def test_divergence_constant_field_interior_zero():
    m = planar(seed=5)
    X = np.tile([0.3, -1.2, 0.0], (m.n_faces, 1))
    d = diffops.divergence(m, X)
    assert np.allclose(d[~m.is_boundary_vertex], 0, atol=1e-11)


def test_divergence_stokes_closed_mesh(rng):
    m = meshgen.icosphere(10.0, 3)
    for X in (diffops.gradient(m, rng.normal(size=m.n_vertices)), rng.normal(size=(m.n_faces, 3))):
        d = diffops.divergence(m, X)
        terms = m.dual_areas * d
        assert abs(math.fsum(terms)) <= 1e-8 * np.abs(terms).sum()


def test_divergence_radial_field_is_two():
    for n in (8, 16):
        m = meshgen.disk(10.0, n)
        X = m.vertices[m.faces].mean(axis=1)
        X[:, 2] = 0
        d = diffops.divergence(m, X)
        assert np.allclose(d[~m.is_boundary_vertex], 2.0, atol=1e-10)


def test_curvature_plane_zero():
    T = diffops.curvature_tensor(planar()).tensor
    assert np.allclose(T, 0, atol=1e-12)


def test_curvature_tensor_symmetric():
    T = diffops.curvature_tensor(meshgen.face_like()).tensor
    assert np.array_equal(T, T.transpose(0, 2, 1))


def test_curvature_icosphere():
    m = meshgen.icosphere(10.0, 4)
    assert m.n_faces >= 5120
    w, _ = diffops.curvature_tensor(m).principal()
    assert np.all(np.abs(w - 0.1) <= 0.01)


def test_curvature_cylinder():
    m = meshgen.cylinder(5.0, 10.0, 64)
    w, dirs = diffops.curvature_tensor(m).principal()
    assert np.all(np.abs(w[:, 1] - 0.2) <= 0.02)
    assert np.all(np.abs(w[:, 0]) <= 0.02)
    # the zero-curvature direction is the axis
    assert np.all(np.abs(dirs[:, 0, 2]) > 0.99)


def test_kappa_s_kappa_n_cylinder():
    m = meshgen.cylinder(5.0, 10.0, 64)
    c = diffops.curvature_tensor(m)
    T3 = c.tensor3d()
    P = m.vertices[m.faces].mean(axis=1)
    circ = np.column_stack([-P[:, 1], P[:, 0], np.zeros(m.n_faces)])
    circ -= np.einsum("fi,fi->f", circ, c.normals)[:, None] * c.normals
    axis = np.tile([0.0, 0.0, 1.0], (m.n_faces, 1))
    assert np.allclose(diffops.kappa_s(T3, circ), 0.2, atol=0.02)
    assert np.allclose(diffops.kappa_s(T3, axis), 0.0, atol=0.02)
    assert np.allclose(diffops.kappa_n(T3, c.normals, circ), 0.0, atol=0.02)
    assert np.allclose(diffops.kappa_n(T3, c.normals, axis), 0.2, atol=0.02)


def test_kappa_s_kappa_n_sphere_isotropic(rng):
    m = meshgen.icosphere(10.0, 4)
    c = diffops.curvature_tensor(m)
    g2 = rng.normal(size=(m.n_faces, 2))
    assert np.allclose(diffops.kappa_s(c.tensor, g2), 0.1, rtol=0.1)
    T3 = c.tensor3d()
    g3 = g2[:, :1] * c.frame_u + g2[:, 1:] * c.frame_v
    assert np.allclose(diffops.kappa_n(T3, c.normals, g3), 0.1, rtol=0.1)
    assert np.allclose(diffops.kappa_s(T3, g3), diffops.kappa_s(c.tensor, g2), rtol=1e-12)


def test_kappa_plane_zero(rng):
    c = diffops.curvature_tensor(planar())
    g = rng.normal(size=(len(c.tensor), 2))
    assert np.allclose(diffops.kappa_s(c.tensor, g), 0, atol=1e-12)


def test_kappa_s_degenerate_gradient_names_face():
    T = np.zeros((3, 2, 2))
    g = np.array([[1.0, 0], [0, 0], [0, 1.0]])
    with pytest.raises(DegenerateGradientError, match="first 1") as ei:
        diffops.kappa_s(T, g, eps_g=1e-6)
    assert list(ei.value.faces) == [1]


def test_kappa_g_straight_lines():
    m = planar(seed=7)
    kg = diffops.kappa_g(m, m.vertices[:, 0])
    assert np.allclose(kg[~m.is_boundary_vertex], 0, atol=1e-10)


def test_kappa_g_concentric_circles_refines():
    medians, p95 = [], []
    for n in (10, 20, 40):
        m = meshgen.disk(10.0, n)
        r = np.linalg.norm(m.vertices[:, :2], axis=1)
        kg = diffops.kappa_g(m, r)
        sel = ~m.is_boundary_vertex & (r > 2.0)
        err = np.abs(kg[sel] * r[sel] - 1.0)
        medians.append(np.median(err))
        p95.append(np.percentile(err, 95))
    assert medians[-1] < 1e-3
    assert medians[0] > medians[1] > medians[2]
    assert p95[-1] < p95[0]


def test_kappa_g_latitude_circles():
    # positive where iso-curves spread along the gradient; phi = z grows
    # toward the pole, where latitude circles shrink, so the sign is negative
    m = meshgen.icosphere(10.0, 4)
    z = m.vertices[:, 2]
    kg = diffops.kappa_g(m, z)
    lat = np.arcsin(np.clip(z / 10.0, -1, 1))
    for deg in (10, 30, 50):
        sel = np.abs(np.degrees(lat) - deg) < 3
        expect = math.tan(math.radians(deg)) / 10.0
        assert abs(-np.median(kg[sel]) - expect) <= 0.03 * expect


def test_kappa_g_degenerate_reports_vertex():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], [[0, 1, 2], [1, 3, 2]])
    phi = np.array([0.0, 1.0, 1.0, 1.0])
    with pytest.raises(DegenerateGradientError, match="vertex 1") as ei:
        diffops.kappa_g(m, phi)
    assert list(ei.value.faces) == [1]


def test_laplacian_is_not_curvature():
    # r and r^2 share their level sets, so kappa_g agrees, but only r has a
    # unit gradient; the Laplacian of r^2 is 4 everywhere
    m = meshgen.disk(10.0, 20)
    r = np.linalg.norm(m.vertices[:, :2], axis=1)
    inner = ~m.is_boundary_vertex
    kg, kg2 = diffops.kappa_g(m, r), diffops.kappa_g(m, r**2)
    assert np.allclose(kg2[inner], kg[inner], rtol=1e-9, atol=1e-12)
    lap2 = diffops.divergence(m, diffops.gradient(m, r**2))
    assert abs(np.median(lap2[inner]) - 4.0) < 0.01
    assert (np.abs(lap2[inner]) / np.abs(kg2[inner])).max() > 10.0


def _turning_rate(X, window):
    """Closed-polyline curvature from chords reaching ``window`` arc length each way."""
    n = len(X)
    seg = np.linalg.norm(np.roll(X, -1, 0) - X, axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])

    def at(t):
        t %= s[-1]
        j = np.searchsorted(s, t, side="right") - 1
        return X[j] + (t - s[j]) / seg[j] * (X[(j + 1) % n] - X[j])

    out = np.empty(n)
    for i in range(n):
        a, b = X[i] - at(s[i] - window), at(s[i] + window) - X[i]
        la, lb = np.linalg.norm(a), np.linalg.norm(b)
        out[i] = np.arccos(np.clip(a @ b / (la * lb), -1, 1)) / (0.5 * (la + lb))
    return out


def test_curve_curvature_decomposition_converges():
    errors = []
    for n_theta in (48, 96, 192):
        m = meshgen.cylinder(5.0, 10.0, n_theta)
        P = m.vertices
        phi = P[:, 2] + 0.5 * P[:, 0]
        (curve,) = isocurve.extract(m, phi, 5.0)
        stats = analysis.curvature_stats(m, phi, [curve], diffops.curvature_tensor(m))
        k2 = stats.kappa_g**2 + stats.kappa_n**2
        err = np.abs(_turning_rate(curve.xyz, 1.0) ** 2 - k2) / k2
        errors.append(np.median(err))
    assert errors[0] > errors[1] > errors[2]
    assert errors[-1] < 0.02


def test_cot_clamp_warns():
    eps = 1e-11
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0.5, eps, 0], [0.5, -1, 0]], [[0, 1, 2], [0, 3, 1]])
    with pytest.warns(RuntimeWarning, match="cot"):
        diffops.divergence_operator(m)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 500))
def test_gradient_linear_property(a, b, seed):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = planar(40, seed)
    g = diffops.gradient(m, a * m.vertices[:, 0] + b * m.vertices[:, 1])
    assert np.allclose(g[:, :2], [a, b], atol=1e-9 * (1 + abs(a) + abs(b)))
