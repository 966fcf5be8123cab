"""Discrete planning energy: iso-scallop width term plus smoothness term.

For a piecewise-linear field ``phi`` with face gradients ``g_j``::

    E_w = sum_j A_j (|g_j| - sqrt((ks_j + kc) / 8))**2
    E_k = sum_j A_j kn_j**2 + sum_i C_i kg_i**2
    E   = E_w + lam * E_k

``ks``/``kn`` are the normal curvatures across/along the iso-curve in face
``j`` and ``kg`` the vertex geodesic curvature. ``E`` is a sum of squares,
so it is assembled as ``|R(phi)|**2`` from a residual vector whose sparse
Jacobian also gives the exact gradient ``2 J^T R``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import diffops
from .config import PlannerConfig
from .diffops import CurvatureData, DegenerateGradientError
from .mesh import TriMesh

_ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


class GougeError(ValueError):
    """Surface is more concave than the cutter: ``ks + kc <= 0``."""

    def __init__(self, message: str, faces=None):
        super().__init__(message)
        self.faces = faces


def target_gradient_norm(kappa_s, kappa_c: float, face_ids=None):
    """Iso-scallop gradient norm ``sqrt((ks + kc) / 8)``."""
    ks = np.asarray(kappa_s, dtype=float)
    total = ks + kappa_c
    if np.any(total <= 0):
        bad = np.flatnonzero(np.atleast_1d(total <= 0))
        if face_ids is not None:
            bad = np.asarray(face_ids)[bad]
        raise GougeError(f"kappa_s + kappa_c <= 0 at face {int(bad[0])} (cutter would gouge)", faces=bad)
    out = np.sqrt(total / 8.0)
    return float(out) if out.ndim == 0 else out


def median_target(curvature: CurvatureData, kappa_c: float) -> float:
    """Direction-free scale of the target norm, using mean curvature for ks."""
    total = np.maximum(curvature.mean + kappa_c, 0.0)
    return float(np.median(np.sqrt(total / 8.0)))


@dataclass(frozen=True)
class EnergyBreakdown:
    E_w: float
    E_kappa: float
    E_total: float
    lam: float
    E_n: float
    E_g: float
    residuals: np.ndarray
    targets: np.ndarray
    kappa_s: np.ndarray
    excluded: np.ndarray

    @property
    def n_excluded(self) -> int:
        return int(self.excluded.sum())

    def summary(self) -> dict:
        return {
            "E_w": self.E_w,
            "E_kappa": self.E_kappa,
            "E_total": self.E_total,
            "E_n": self.E_n,
            "E_g": self.E_g,
            "lam": self.lam,
            "excluded_faces": self.n_excluded,
        }


class _State:
    """Field quantities shared by the energy, its gradient and Jacobian."""

    def __init__(self, mesh: TriMesh, phi, kappa_c: float, lam: float, curvature: CurvatureData, eps_g: float):
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (mesh.n_vertices,):
            raise ValueError(f"expected {mesh.n_vertices} vertex values, got shape {phi.shape}")
        self.mesh, self.lam, self.kappa_c = mesh, lam, kappa_c
        B = diffops.frame_gradient_operator(mesh)
        g = (B @ phi).reshape(-1, 2)
        s = np.linalg.norm(g, axis=1)
        bad = s < eps_g
        if bad.any():
            idx = np.flatnonzero(bad)
            raise DegenerateGradientError(
                f"|grad phi| < {eps_g:g} on {idx.size} face(s), first {int(idx[0])}", faces=idx
            )
        T = curvature.tensor
        Tp = _ROT.T @ T @ _ROT
        u = g / s[:, None]
        Tu, Tpu = np.einsum("fij,fj->fi", T, u), np.einsum("fij,fj->fi", Tp, u)
        ks = np.einsum("fi,fi->f", u, Tu)
        kn = np.einsum("fi,fi->f", u, Tpu)
        total = ks + kappa_c
        excluded = total <= 0
        if excluded.any():
            warnings.warn(
                f"{int(excluded.sum())} face(s) with kappa_s + kappa_c <= 0 left out of the width term "
                f"(first {int(np.argmax(excluded))})",
                RuntimeWarning,
                stacklevel=3,
            )
        target = np.sqrt(np.where(excluded, 1.0, total) / 8.0)
        target[excluded] = np.nan
        r = np.where(excluded, 0.0, s - np.nan_to_num(target))
        kg = diffops.frame_divergence_operator(mesh) @ (u.ravel())
        self.B, self.g, self.s, self.u = B, g, s, u
        self.T, self.Tp, self.Tu, self.Tpu = T, Tp, Tu, Tpu
        self.ks, self.kn, self.kg = ks, kn, kg
        self.target, self.r, self.excluded = target, r, excluded

    def breakdown(self) -> EnergyBreakdown:
        A, C = self.mesh.face_areas, self.mesh.dual_areas
        E_w = math.fsum(A * self.r**2)
        E_n = math.fsum(A * self.kn**2)
        E_g = math.fsum(C * self.kg**2)
        E_k = E_n + E_g
        return EnergyBreakdown(
            E_w=E_w,
            E_kappa=E_k,
            E_total=E_w + self.lam * E_k,
            lam=self.lam,
            E_n=E_n,
            E_g=E_g,
            residuals=self.r,
            targets=self.target,
            kappa_s=self.ks,
            excluded=self.excluded,
        )

    def residual_vector(self) -> np.ndarray:
        A, C = self.mesh.face_areas, self.mesh.dual_areas
        parts = [np.sqrt(A) * self.r]
        if self.lam > 0:
            w = math.sqrt(self.lam)
            parts += [w * np.sqrt(A) * self.kn, w * np.sqrt(C) * self.kg]
        return np.concatenate(parts)

    def jacobian(self) -> sparse.csr_matrix:
        """Sparse d(residual_vector)/d(phi)."""
        mesh = self.mesh
        nf = mesh.n_faces
        A, C = mesh.face_areas, mesh.dual_areas
        u, s = self.u, self.s
        # d/dg of the face residuals, each a 2-vector per face
        P_Tu = self.Tu - np.einsum("fi,f->fi", u, np.einsum("fi,fi->f", u, self.Tu))
        dks = 2.0 * P_Tu / s[:, None]
        t = np.nan_to_num(self.target, nan=1.0)
        dr = u - dks / (16.0 * t[:, None])
        dr[self.excluded] = 0.0
        rows = np.repeat(np.arange(nf), 2)
        cols = np.arange(2 * nf)

        def face_rows(vec, scale):
            W = sparse.csr_matrix(((vec * scale[:, None]).ravel(), (rows, cols)), shape=(nf, 2 * nf))
            return W @ self.B

        blocks = [face_rows(dr, np.sqrt(A))]
        if self.lam > 0:
            w = math.sqrt(self.lam)
            P_Tpu = self.Tpu - np.einsum("fi,f->fi", u, np.einsum("fi,fi->f", u, self.Tpu))
            dkn = 2.0 * P_Tpu / s[:, None]
            blocks.append(face_rows(dkn, w * np.sqrt(A)))
            # d(unit gradient)/dg = (I - u u^T) / |g|, block diagonal
            P = (np.eye(2)[None] - np.einsum("fi,fj->fij", u, u)) / s[:, None, None]
            br = np.repeat(np.arange(2 * nf), 2)
            bc = (2 * np.arange(nf)[:, None, None] + np.zeros((1, 2, 1), dtype=int) + np.arange(2)[None, None, :]).ravel()
            Pm = sparse.csr_matrix((P.ravel(), (br, bc)), shape=(2 * nf, 2 * nf))
            D2 = diffops.frame_divergence_operator(mesh)
            blocks.append(sparse.diags(w * np.sqrt(C)) @ (D2 @ (Pm @ self.B)))
        return sparse.vstack(blocks).tocsr()

    def curvature_blocks(self) -> np.ndarray:
        """Per-face 2x2 blocks of ``sum_k R_k d2R_k/dg2``.

        Every residual is a sum of single-face functions of ``g``, so the
        second-order part of the Hessian of ``|R|^2`` is
        ``2 B^T blockdiag(S) B`` with these blocks ``S``.
        """
        mesh = self.mesh
        A, C = mesh.face_areas, mesh.dual_areas
        u, s = self.u, self.s
        I = np.eye(2)[None]
        P = I - np.einsum("fi,fj->fij", u, u)

        def unit_contract(w):
            # sum_c w_c d2(u_c)/dg2
            wu = np.einsum("fi,fi->f", w, u)
            Pw = np.einsum("fij,fj->fi", P, w)
            out = wu[:, None, None] * P + np.einsum("fi,fj->fij", Pw, u) + np.einsum("fi,fj->fij", u, Pw)
            return -out / (s**2)[:, None, None]

        def quad_hess(M, Mu):
            PMP = P @ M @ P
            return 2.0 * PMP / (s**2)[:, None, None] + 2.0 * unit_contract(Mu)

        def quad_grad(Mu):
            return 2.0 * np.einsum("fij,fj->fi", P, Mu) / s[:, None]

        t = np.nan_to_num(self.target, nan=1.0)
        dks = quad_grad(self.Tu)
        d2ks = quad_hess(self.T, self.Tu)
        d2t = d2ks / (16.0 * t)[:, None, None] - np.einsum("fi,fj->fij", dks, dks) / (256.0 * t**3)[:, None, None]
        d2r = P / s[:, None, None] - d2t
        S = (A * self.r)[:, None, None] * d2r
        S[self.excluded] = 0.0
        if self.lam > 0:
            S += (self.lam * A * self.kn)[:, None, None] * quad_hess(self.Tp, self.Tpu)
            w = self.lam * (diffops.frame_divergence_operator(mesh).T @ (C * self.kg)).reshape(-1, 2)
            S += unit_contract(w)
        return S


def _state(mesh, phi, config: PlannerConfig, curvature, eps_g=None, lam=None) -> _State:
    if curvature is None:
        curvature = diffops.curvature_tensor(mesh)
    if eps_g is None:
        eps_g = config.resolve_eps_g(curvature)
    return _State(mesh, phi, config.kappa_c, config.lam if lam is None else lam, curvature, eps_g)


def energy(mesh: TriMesh, phi, config: PlannerConfig, curvature: CurvatureData | None = None, eps_g=None) -> EnergyBreakdown:
    """Evaluate the discrete planning energy and its components."""
    return _state(mesh, phi, config, curvature, eps_g).breakdown()


def energy_gradient(mesh: TriMesh, phi, config: PlannerConfig, curvature: CurvatureData | None = None, eps_g=None) -> np.ndarray:
    """Exact dE_total/dphi for every vertex (curvature tensors are mesh constants)."""
    st = _state(mesh, phi, config, curvature, eps_g)
    return 2.0 * (st.jacobian().T @ st.residual_vector())


def width_residuals(mesh: TriMesh, phi, config: PlannerConfig, curvature: CurvatureData | None = None, eps_g=None):
    """Per-face ``(r_j, target_j)``; excluded faces have ``r = 0``, target NaN."""
    st = _state(mesh, phi, config, curvature, eps_g, lam=0.0)
    return st.r, st.target


def constraint_values(mesh: TriMesh, phi, eps_g: float) -> np.ndarray:
    """Per-face ``|grad phi| - eps_g``; the field is feasible iff all are >= 0."""
    return np.linalg.norm(diffops.gradient(mesh, phi), axis=1) - eps_g
