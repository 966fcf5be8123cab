"""Estimator-style front end: ``fit`` solves the field, ``transform`` plans paths.

``X`` is a :class:`TriMesh` or a ``(vertices, faces)`` pair; there is no
target. Fitted attributes end in an underscore, as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import diffops, pipeline
from .config import PlannerConfig
from .field import ScalarField
from .mesh import TriMesh
from .optimize import BoundaryCondition, _warn_if_not_converged, best_scale, solve, solve_laplacian_baseline


def check_mesh(X) -> TriMesh:
    """Accept a mesh or a ``(vertices, faces)`` pair."""
    if isinstance(X, TriMesh):
        return X
    try:
        V, F = X
    except (TypeError, ValueError):
        raise TypeError(f"expected a TriMesh or (vertices, faces), got {type(X).__name__}") from None
    V = check_array(V, dtype=np.float64, ensure_min_samples=3)
    F = check_array(F, dtype=np.int64, ensure_min_samples=1)
    return TriMesh(V, F)


def make_boundary_condition(mesh: TriMesh, mode: str, seed_loop=0, seed_span=None, seed_axis=None, seed_side="min"):
    """Seed for ``mode``: an explicit loop span wins, then an axis extreme, then the whole loop."""
    if mode == "contour":
        return BoundaryCondition.contour(mesh)
    if seed_span is None and seed_axis is not None:
        return BoundaryCondition.from_extreme(mesh, seed_axis, seed_side)
    return BoundaryCondition.from_loop(mesh, seed_loop, seed_span)


class _PlannerBase(BaseEstimator):
    def _bc(self, mesh):
        return make_boundary_condition(mesh, self.mode, self.seed_loop, self.seed_span, self.seed_axis, self.seed_side)

    def transform(self, X=None, h=None, schedule="iso-scallop", chord_tol=None):
        """Tool path for scallop height ``h`` on the fitted field (no re-solve)."""
        check_is_fitted(self, "phi_")
        mesh = self.mesh_ if X is None else check_mesh(X)
        if mesh.checksum() != self.mesh_.checksum():
            raise ValueError("transform mesh differs from the fitted mesh")
        h = self.h if h is None else h
        chord_tol = self.chord_tol if chord_tol is None else chord_tol
        if schedule == "iso-scallop":
            sched = pipeline.schedule_iso_scallop(self.phi_, h, self.mode)
        elif schedule == "adaptive":
            sched = pipeline.schedule_adaptive(mesh, self.phi_, self.curvature_, h, self.kappa_c, mode=self.mode)
        else:
            raise ValueError(f"unknown schedule {schedule!r}")
        cfg = {"kappa_c": self.kappa_c, "h": h, "lam": getattr(self, "lam", None), "chord_tol": chord_tol}
        return pipeline.build_toolpath(mesh, self.phi_, sched, chord_tol, cfg, self.field_.checksum())

    def fit_transform(self, X, y=None, **kw):
        return self.fit(X, y).transform(**kw)


class IsoLevelPlanner(_PlannerBase):
    """Optimised iso-scallop/smooth field on a mesh.

    In direction mode the seed is loop positions ``seed_span`` of boundary
    loop ``seed_loop`` when a span is given, otherwise the boundary vertices
    at the ``seed_side`` extreme of ``seed_axis`` (default: x minimum).

    After ``fit``: ``phi_`` (per-vertex field), ``field_`` (ScalarField),
    ``report_`` (SolveReport), ``curvature_``, ``mesh_``, ``boundary_``.
    """

    def __init__(
        self,
        kappa_c=0.25,
        h=1.0,
        lam=0.0,
        chord_tol=0.01,
        eps_g=None,
        mode="direction",
        seed_loop=0,
        seed_span=None,
        seed_axis="x",
        seed_side="min",
        max_outer=4,
        max_inner=60,
        grad_tol=1e-6,
        barrier_mu0=1e-3,
        barrier_shrink=0.1,
    ):
        self.kappa_c = kappa_c
        self.h = h
        self.lam = lam
        self.chord_tol = chord_tol
        self.eps_g = eps_g
        self.mode = mode
        self.seed_loop = seed_loop
        self.seed_span = seed_span
        self.seed_axis = seed_axis
        self.seed_side = seed_side
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.grad_tol = grad_tol
        self.barrier_mu0 = barrier_mu0
        self.barrier_shrink = barrier_shrink

    def config(self) -> PlannerConfig:
        keys = ("kappa_c", "h", "lam", "chord_tol", "eps_g", "max_outer", "max_inner", "grad_tol", "barrier_mu0", "barrier_shrink")
        return PlannerConfig(**{k: getattr(self, k) for k in keys})

    def fit(self, X, y=None, phi0=None):
        mesh = check_mesh(X)
        cfg = self.config()
        bc = self._bc(mesh)
        self.curvature_ = diffops.curvature_tensor(mesh)
        self.phi_, self.report_ = solve(mesh, bc, cfg, self.curvature_, phi0=phi0)
        _warn_if_not_converged(self.report_)
        self.mesh_, self.boundary_ = mesh, bc
        self.field_ = ScalarField.on(mesh, self.phi_, kind="optimized", mode=self.mode)
        return self


class LaplacianPlanner(_PlannerBase):
    """Harmonic-field baseline, rescaled to best fit the iso-scallop targets.

    ``scale_`` is the least-squares factor applied to the 0-to-1 harmonic
    field so its level spacing is comparable with optimised fields.
    """

    def __init__(self, kappa_c=0.25, h=1.0, chord_tol=0.01, mode="contour", seed_loop=0, seed_span=None, seed_axis="x", seed_side="min", high=None):
        self.kappa_c = kappa_c
        self.h = h
        self.chord_tol = chord_tol
        self.mode = mode
        self.seed_loop = seed_loop
        self.seed_span = seed_span
        self.seed_axis = seed_axis
        self.seed_side = seed_side
        self.high = high

    def fit(self, X, y=None):
        mesh = check_mesh(X)
        bc = self._bc(mesh)
        self.curvature_ = diffops.curvature_tensor(mesh)
        raw = solve_laplacian_baseline(mesh, bc, self.high)
        self.scale_ = best_scale(mesh, raw, self.kappa_c, self.curvature_)
        self.phi_ = self.scale_ * raw
        self.mesh_, self.boundary_ = mesh, bc
        self.field_ = ScalarField.on(mesh, self.phi_, kind="laplacian", mode=self.mode, scale=self.scale_)
        return self
