"""Synthetic test surfaces: planar patches, spheres, cylinders, height fields.

All generators return counter-clockwise (outward/upward facing) meshes.
Randomised layouts take an explicit ``seed``.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay

from .mesh import TriMesh


def _orient_up(points2d: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = points2d
    a, b, c = p[tris[:, 0]], p[tris[:, 1]], p[tris[:, 2]]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    tris = tris.copy()
    flip = cross < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


def _compact(vertices: np.ndarray, faces: np.ndarray) -> TriMesh:
    used = np.unique(faces)
    remap = -np.ones(len(vertices), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(vertices[used], remap[faces])


def rectangle(width: float, height: float, nx: int, ny: int, alternate: bool = True) -> TriMesh:
    """Planar grid on [0, width] x [0, height] in z = 0.

    ``alternate`` flips the diagonal in a checkerboard pattern, which keeps
    the triangulation free of a preferred direction.
    """
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    faces = []
    for j in range(ny):
        for i in range(nx):
            a, b = idx[j, i], idx[j, i + 1]
            c, d = idx[j + 1, i + 1], idx[j + 1, i]
            if alternate and (i + j) % 2:
                faces += [[a, b, d], [b, c, d]]
            else:
                faces += [[a, b, c], [a, c, d]]
    return TriMesh(verts, np.array(faces))


def strip(width: float = 20.0, height: float = 10.0, target_faces: int = 5000) -> TriMesh:
    """Planar rectangle with roughly ``target_faces`` near-isotropic faces."""
    n = np.sqrt(target_faces / (2.0 * width * height))
    return rectangle(width, height, max(1, round(width * n)), max(1, round(height * n)))


def random_planar(n_points: int = 120, size: float = 1.0, seed: int = 0) -> TriMesh:
    """Delaunay triangulation of jittered points in a square (z = 0)."""
    rng = np.random.default_rng(seed)
    k = max(2, int(np.sqrt(n_points)))
    edge = np.linspace(0, size, k + 1)
    border = np.unique(
        np.concatenate(
            [
                np.column_stack([edge, np.zeros_like(edge)]),
                np.column_stack([edge, np.full_like(edge, size)]),
                np.column_stack([np.zeros_like(edge), edge]),
                np.column_stack([np.full_like(edge, size), edge]),
            ]
        ),
        axis=0,
    )
    inner = rng.uniform(0.05 * size, 0.95 * size, size=(n_points, 2))
    pts = np.vstack([border, inner])
    tris = _orient_up(pts, Delaunay(pts).simplices)
    return _compact(np.column_stack([pts, np.zeros(len(pts))]), tris)


def _ring_points(radii: np.ndarray, first_count: int = 6) -> np.ndarray:
    pts = [np.zeros((1, 2))] if radii[0] == 0 else []
    for k, r in enumerate(radii):
        if r == 0:
            continue
        n = max(first_count, int(round(2 * np.pi * r / (radii[1] - radii[0] if len(radii) > 1 else 1.0))))
        ang = np.linspace(0, 2 * np.pi, n, endpoint=False) + (0.5 * np.pi / n) * (k % 2)
        pts.append(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))
    return np.vstack(pts)


def disk(radius: float = 10.0, n_rings: int = 20) -> TriMesh:
    """Planar disk built from concentric rings of evenly spaced points."""
    pts = _ring_points(np.linspace(0.0, radius, n_rings + 1))
    tris = _orient_up(pts, Delaunay(pts).simplices)
    return _compact(np.column_stack([pts, np.zeros(len(pts))]), tris)


def annulus(r_inner: float = 5.0, r_outer: float = 10.0, n_rings: int = 10) -> TriMesh:
    """Planar annulus; the hole is cut out of a Delaunay triangulation."""
    radii = np.linspace(r_inner, r_outer, n_rings + 1)
    pts = _ring_points(radii)
    tris = _orient_up(pts, Delaunay(pts).simplices)
    cen = pts[tris].mean(axis=1)
    keep = np.linalg.norm(cen, axis=1) > r_inner
    return _compact(np.column_stack([pts, np.zeros(len(pts))]), tris[keep])


def icosphere(radius: float = 10.0, subdivisions: int = 3) -> TriMesh:
    """Subdivided icosahedron; 20 * 4**subdivisions faces."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    V = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    F = list(faces)
    for _ in range(subdivisions):
        mid: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in mid:
                m = V[a] + V[b]
                V.append(m / np.linalg.norm(m))
                mid[key] = len(V) - 1
            return mid[key]

        nf = []
        for a, b, c in F:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        F = nf
    return TriMesh(radius * np.array(V), np.array(F))


def cylinder(radius: float = 5.0, height: float = 10.0, n_theta: int = 64, n_z: int | None = None) -> TriMesh:
    """Open tube around the z axis with outward normals (two boundary loops)."""
    if n_z is None:
        n_z = max(1, int(round(height / (2 * np.pi * radius / n_theta))))
    ang = np.linspace(0, 2 * np.pi, n_theta, endpoint=False)
    verts = []
    for k in range(n_z + 1):
        shift = (np.pi / n_theta) * (k % 2)
        verts.append(
            np.column_stack(
                [radius * np.cos(ang + shift), radius * np.sin(ang + shift), np.full(n_theta, height * k / n_z)]
            )
        )
    verts = np.vstack(verts)
    faces = []
    for k in range(n_z):
        base, up = k * n_theta, (k + 1) * n_theta
        for i in range(n_theta):
            j = (i + 1) % n_theta
            if k % 2 == 0:
                faces += [[base + i, base + j, up + i], [base + j, up + j, up + i]]
            else:
                faces += [[base + i, base + j, up + j], [base + i, up + j, up + i]]
    return TriMesh(verts, np.array(faces))


def sphere_cap(radius: float = 10.0, cap_angle: float = np.pi / 3, n_rings: int = 40) -> TriMesh:
    """Spherical cap around +z, polar angle up to ``cap_angle``.

    A ring-point disk is mapped with the azimuthal equidistant projection, so
    ring spacing is uniform in arc length.
    """
    d = disk(radius * cap_angle, n_rings)
    xy = d.vertices[:, :2]
    rho = np.linalg.norm(xy, axis=1)
    theta = rho / radius
    az = np.arctan2(xy[:, 1], xy[:, 0])
    verts = radius * np.column_stack([np.sin(theta) * np.cos(az), np.sin(theta) * np.sin(az), np.cos(theta)])
    return TriMesh(verts, d.faces)


def height_field(xy_mesh: TriMesh, fn) -> TriMesh:
    """Lift a planar mesh to z = fn(x, y)."""
    x, y = xy_mesh.vertices[:, 0], xy_mesh.vertices[:, 1]
    return TriMesh(np.column_stack([x, y, fn(x, y)]), xy_mesh.faces)


def wavy_sheet(
    width: float = 60.0,
    height: float = 40.0,
    amplitude: float = 1.5,
    wavelength: float = 25.0,
    target_faces: int = 10000,
) -> TriMesh:
    """Smooth free-form test sheet z = a sin(kx) cos(ky) over a rectangle."""
    k = 2 * np.pi / wavelength
    base = strip(width, height, target_faces)
    return height_field(base, lambda x, y: amplitude * np.sin(k * x + 0.3) * np.cos(0.8 * k * y))


def face_like(semi_x: float = 30.0, semi_y: float = 40.0, n_rings: int = 28) -> TriMesh:
    """Elliptical dome with a nose ridge and two eye hollows.

    A stand-in for a scanned face: disk topology, one boundary loop, mixed
    convex and mildly concave regions (all concave curvature stays below
    0.25 / mm so a radius-4 ball end never gouges).
    """
    pts = _ring_points(np.linspace(0.0, 1.0, n_rings + 1))
    tris = _orient_up(pts, Delaunay(pts).simplices)
    u, v = pts[:, 0], pts[:, 1]
    x, y = semi_x * u, semi_y * v
    r2 = u ** 2 + v ** 2
    z = 10.0 * (1.0 - r2)
    z += 6.0 * np.exp(-((x / 5.0) ** 2 + ((y + 3.0) / 9.0) ** 2))
    z -= 2.0 * np.exp(-(((x - 11.0) ** 2 + (y - 9.0) ** 2) / 36.0))
    z -= 2.0 * np.exp(-(((x + 11.0) ** 2 + (y - 9.0) ** 2) / 36.0))
    z += 1.5 * np.exp(-((x / 9.0) ** 2 + ((y + 22.0) / 4.0) ** 2))
    return _compact(np.column_stack([x, y, z]), tris)
