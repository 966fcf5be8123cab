"""Discrete differential operators on triangle meshes.

Face-constant gradients of piecewise-linear fields, vertex divergence of
face vector fields (dual-cell flux divided by the barycentric cell area),
per-face curvature tensors, and the curvature scalars used by the planner:

* ``kappa_s`` -- normal curvature across the path (along the gradient),
* ``kappa_n`` -- normal curvature along the path,
* ``kappa_g`` -- geodesic curvature of the iso-curves.

Sign conventions: curvatures are positive on convex surfaces with outward
normals; ``kappa_g = div(grad phi / |grad phi|)`` is positive where the
iso-curves bend away from increasing ``phi`` (concentric circles around a
minimum have ``kappa_g = 1/r``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .mesh import TriMesh

COT_CLAMP = 1e8


class DegenerateGradientError(ValueError):
    """The field's gradient is (nearly) zero where a direction is needed."""

    def __init__(self, message: str, faces=None, vertices=None):
        super().__init__(message)
        self.faces = None if faces is None else np.asarray(faces)
        self.vertices = None if vertices is None else np.asarray(vertices)


def _cached(mesh: TriMesh, key: str, build):
    if key not in mesh._cache:
        mesh._cache[key] = build()
    return mesh._cache[key]


def face_frames(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-face orthonormal tangent frame ``(u, v)`` with ``u x v = N``."""

    def build():
        e2 = mesh.face_edge_vectors[:, 2]
        u = e2 / np.linalg.norm(e2, axis=1)[:, None]
        v = np.cross(mesh.face_normals, u)
        return u, v

    return _cached(mesh, "frames", build)


def gradient_operator(mesh: TriMesh) -> sparse.csr_matrix:
    """Sparse (3F, V) matrix mapping vertex values to stacked face gradients."""

    def build():
        F = mesh.faces
        nf = len(F)
        # N x e_j / (2 A), e_j opposite corner j
        w = np.cross(mesh.face_normals[:, None, :], mesh.face_edge_vectors) / (2.0 * mesh.face_areas)[:, None, None]
        rows = (3 * np.arange(nf)[:, None, None] + np.arange(3)[None, None, :]).repeat(3, axis=1)
        cols = np.broadcast_to(F[:, :, None], (nf, 3, 3))
        return sparse.csr_matrix(
            (w.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * nf, mesh.n_vertices)
        )

    return _cached(mesh, "G", build)


def frame_gradient_operator(mesh: TriMesh) -> sparse.csr_matrix:
    """Sparse (2F, V) matrix giving face gradients in the ``(u, v)`` frames."""

    def build():
        u, v = face_frames(mesh)
        P = _frame_projection(u, v)
        return (P @ gradient_operator(mesh)).tocsr()

    return _cached(mesh, "B", build)


def _frame_projection(u: np.ndarray, v: np.ndarray) -> sparse.csr_matrix:
    nf = len(u)
    rows = np.repeat(np.arange(2 * nf), 3)
    cols = (3 * np.arange(nf)[:, None, None] + np.arange(3)[None, None, :]).repeat(2, axis=1).ravel()
    vals = np.stack([u, v], axis=1).ravel()
    return sparse.csr_matrix((vals, (rows, cols)), shape=(2 * nf, 3 * nf))


def gradient(mesh: TriMesh, phi) -> np.ndarray:
    """Per-face gradient of the piecewise-linear interpolant, shape (F, 3)."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (mesh.n_vertices,):
        raise ValueError(f"expected {mesh.n_vertices} vertex values, got shape {phi.shape}")
    return (gradient_operator(mesh) @ phi).reshape(-1, 3)


def _cotangents(mesh: TriMesh) -> np.ndarray:
    """Cotangent of the interior angle at each face corner, shape (F, 3)."""
    e = mesh.face_edge_vectors
    # angle at corner j lies between -e_{j+2} and e_{j+1}
    a = -e[:, [2, 0, 1]]
    b = e[:, [1, 2, 0]]
    dot = np.einsum("fkd,fkd->fk", a, b)
    crs = np.linalg.norm(np.cross(a, b), axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        cot = dot / crs
    big = ~np.isfinite(cot) | (np.abs(cot) > COT_CLAMP)
    if big.any():
        warnings.warn(
            f"{int(big.sum())} corner cotangents clamped to +/-{COT_CLAMP:g}", RuntimeWarning, stacklevel=3
        )
        cot = np.where(big, np.sign(np.nan_to_num(dot, nan=1.0)) * COT_CLAMP, cot)
    return cot


def divergence_operator(mesh: TriMesh) -> sparse.csr_matrix:
    """Sparse (V, 3F) matrix: vertex divergence of a face-constant field.

    Interior cells use the cotangent flux through the dual-cell boundary;
    boundary cells also collect the flux through their two half boundary
    edges, so that constant fields are divergence-free everywhere.
    """

    def build():
        F = mesh.faces
        X = mesh.vertices
        nf = len(F)
        cot = _cotangents(mesh)
        rows, cols, vals = [], [], []
        for c in range(3):
            i, j, k = F[:, c], F[:, (c + 1) % 3], F[:, (c + 2) % 3]
            # edge i->j sees the angle at k; edge i->k sees the angle at j
            w = 0.5 * (cot[:, (c + 2) % 3, None] * (X[j] - X[i]) + cot[:, (c + 1) % 3, None] * (X[k] - X[i]))
            rows.append(np.repeat(i, 3))
            cols.append((3 * np.arange(nf)[:, None] + np.arange(3)).ravel())
            vals.append(w.ravel())
        be = mesh.boundary_edges
        if len(be):
            f = mesh.edge_faces[be, 0]
            a, b = mesh.edges[be, 0], mesh.edges[be, 1]
            tri = F[f]
            pos_a = np.argmax(tri == a[:, None], axis=1)
            forward = tri[np.arange(len(f)), (pos_a + 1) % 3] == b
            s, t = np.where(forward, a, b), np.where(forward, b, a)
            out = np.cross(X[t] - X[s], mesh.face_normals[f])
            for end in (s, t):
                rows.append(np.repeat(end, 3))
                cols.append((3 * f[:, None] + np.arange(3)).ravel())
                vals.append(0.5 * out.ravel())
        M = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(mesh.n_vertices, 3 * nf),
        )
        return (sparse.diags(1.0 / mesh.dual_areas) @ M).tocsr()

    return _cached(mesh, "D", build)


def frame_divergence_operator(mesh: TriMesh) -> sparse.csr_matrix:
    """Divergence acting on face fields given in ``(u, v)`` frame coordinates."""

    def build():
        u, v = face_frames(mesh)
        return (divergence_operator(mesh) @ _frame_projection(u, v).T).tocsr()

    return _cached(mesh, "D2", build)


def divergence(mesh: TriMesh, X) -> np.ndarray:
    """Per-vertex divergence of a face-constant vector field ``X`` (F, 3)."""
    X = np.asarray(X, dtype=float)
    if X.shape != (mesh.n_faces, 3):
        raise ValueError(f"expected a ({mesh.n_faces}, 3) face field, got {X.shape}")
    return divergence_operator(mesh) @ X.ravel()


def stiffness_matrix(mesh: TriMesh) -> sparse.csr_matrix:
    """Cotangent stiffness matrix ``G^T diag(A) G`` (symmetric PSD)."""

    def build():
        G = gradient_operator(mesh)
        A = sparse.diags(np.repeat(mesh.face_areas, 3))
        return (G.T @ A @ G).tocsr()

    return _cached(mesh, "K", build)


# -- curvature ---------------------------------------------------------------

@dataclass(frozen=True)
class CurvatureData:
    """Per-face curvature tensors in each face's tangent frame.

    ``tensor[f]`` is the symmetric 2x2 second fundamental form expressed in
    ``(frame_u[f], frame_v[f])``.
    """

    tensor: np.ndarray
    frame_u: np.ndarray
    frame_v: np.ndarray
    normals: np.ndarray

    def tensor3d(self) -> np.ndarray:
        """The same tensors embedded as (F, 3, 3) ambient matrices."""
        Q = np.stack([self.frame_u, self.frame_v], axis=2)
        return Q @ self.tensor @ Q.transpose(0, 2, 1)

    def principal(self) -> tuple[np.ndarray, np.ndarray]:
        """Principal curvatures (F, 2), ascending, and their directions (F, 2, 3)."""
        w, vec = np.linalg.eigh(self.tensor)
        Q = np.stack([self.frame_u, self.frame_v], axis=2)
        dirs = np.einsum("fij,fjk->fki", Q, vec)
        return w, dirs

    @property
    def mean(self) -> np.ndarray:
        return 0.5 * np.trace(self.tensor, axis1=1, axis2=2)


def curvature_tensor(mesh: TriMesh) -> CurvatureData:
    """Per-face curvature tensor from vertex-normal differences.

    For each face the three edge vectors ``e`` and normal differences ``dn``
    along them give six linear equations ``T [e.u, e.v] = [dn.u, dn.v]`` for
    the three unknowns of the symmetric tensor, solved by least squares.
    """

    def build():
        F = mesh.faces
        n = mesh.vertex_normals()
        u, v = face_frames(mesh)
        e = mesh.face_edge_vectors
        dn = np.stack([n[F[:, 2]] - n[F[:, 1]], n[F[:, 0]] - n[F[:, 2]], n[F[:, 1]] - n[F[:, 0]]], axis=1)
        eu, ev = np.einsum("fkd,fd->fk", e, u), np.einsum("fkd,fd->fk", e, v)
        nu, nv = np.einsum("fkd,fd->fk", dn, u), np.einsum("fkd,fd->fk", dn, v)
        nf = len(F)
        A = np.zeros((nf, 6, 3))
        A[:, 0:3, 0], A[:, 0:3, 1] = eu, ev
        A[:, 3:6, 1], A[:, 3:6, 2] = eu, ev
        rhs = np.concatenate([nu, nv], axis=1)
        AtA = A.transpose(0, 2, 1) @ A
        Atb = np.einsum("fki,fk->fi", A, rhs)
        cond = np.linalg.cond(AtA)
        bad = ~np.isfinite(cond) | (cond > 1e12)
        sol = np.zeros((nf, 3))
        ok = ~bad
        sol[ok] = np.linalg.solve(AtA[ok], Atb[ok][..., None])[..., 0]
        if bad.any():
            warnings.warn(
                f"curvature fit rank-deficient on {int(bad.sum())} faces (first {int(np.argmax(bad))}); "
                "using a zero tensor there",
                RuntimeWarning,
                stacklevel=3,
            )
        T = np.empty((nf, 2, 2))
        T[:, 0, 0], T[:, 0, 1], T[:, 1, 0], T[:, 1, 1] = sol[:, 0], sol[:, 1], sol[:, 1], sol[:, 2]
        for arr in (T, u, v):
            arr.setflags(write=False)
        return CurvatureData(T, u, v, mesh.face_normals)

    return _cached(mesh, "curv", build)


def _unit(g: np.ndarray, eps_g: float, face_ids=None) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    norm = np.linalg.norm(g, axis=-1)
    small = norm < eps_g
    if np.any(small):
        idx = np.flatnonzero(np.atleast_1d(small))
        if face_ids is not None:
            idx = np.asarray(face_ids)[idx]
        raise DegenerateGradientError(
            f"gradient norm below {eps_g:g} on {idx.size} face(s), first {int(idx[0])}", faces=idx
        )
    return g / norm[..., None]


def kappa_s(T, g, eps_g: float = 1e-12, face_ids=None) -> np.ndarray:
    """Normal curvature in the gradient direction, ``t^T T t`` with t = g/|g|.

    ``T`` may be (..., 3, 3) ambient or (..., 2, 2) frame tensors; ``g``
    must match (3- or 2-vectors).
    """
    t = _unit(g, eps_g, face_ids)
    return np.einsum("...i,...ij,...j->...", t, np.asarray(T), t)


def kappa_n(T, n, g, eps_g: float = 1e-12, face_ids=None) -> np.ndarray:
    """Normal curvature along the iso-curve tangent ``n x g/|g|``."""
    t = np.cross(np.asarray(n, dtype=float), _unit(g, eps_g, face_ids))
    return np.einsum("...i,...ij,...j->...", t, np.asarray(T), t)


def unit_gradient(mesh: TriMesh, phi, eps_g: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Normalised face gradients and a mask of faces with ``|grad| > eps_g``.

    Masked-out faces get a zero vector instead of raising.
    """
    g = gradient(mesh, phi)
    norm = np.linalg.norm(g, axis=1)
    ok = norm > max(eps_g, 0.0)
    unit = np.zeros_like(g)
    unit[ok] = g[ok] / norm[ok, None]
    return unit, ok


def kappa_g(mesh: TriMesh, phi, eps_g: float = 1e-12) -> np.ndarray:
    """Per-vertex geodesic curvature of the iso-curves of ``phi``."""
    unit, ok = unit_gradient(mesh, phi, eps_g)
    if not ok.all():
        bad_faces = np.flatnonzero(~ok)
        verts = np.unique(mesh.faces[bad_faces])
        raise DegenerateGradientError(
            f"degenerate gradient on a face incident to vertex {int(verts[0])}",
            faces=bad_faces,
            vertices=verts,
        )
    return divergence(mesh, unit)
