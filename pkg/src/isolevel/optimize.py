"""Field initialisation, constrained minimisation and the harmonic baseline."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.optimize import lsq_linear
from scipy.sparse.linalg import spsolve

from . import diffops
from .config import PlannerConfig
from .diffops import CurvatureData, DegenerateGradientError
from .energy import EnergyBreakdown, _State, median_target
from .mesh import MeshError, TriMesh

logger = logging.getLogger(__name__)

LINEAR_SOLVE_RTOL = 1e-10


class SolverError(RuntimeError):
    """The optimisation could not produce a feasible field."""


@dataclass(frozen=True)
class BoundaryCondition:
    """Seed curve ``C0`` (held at level 0) and path topology.

    ``mode`` is ``"direction"`` (seed = part of one boundary loop) or
    ``"contour"`` (seed = every boundary vertex).
    """

    seed: np.ndarray
    mode: str = "direction"

    def __post_init__(self):
        seed = np.unique(np.asarray(self.seed, dtype=np.int64))
        object.__setattr__(self, "seed", seed)
        if self.mode not in ("direction", "contour"):
            raise ValueError(f"mode must be 'direction' or 'contour', got {self.mode!r}")
        if seed.size == 0:
            raise ValueError("seed curve is empty")

    def validate(self, mesh: TriMesh) -> None:
        if self.seed.max() >= mesh.n_vertices or self.seed.min() < 0:
            raise MeshError("seed references a missing vertex")
        if self.seed.size >= mesh.n_vertices:
            raise MeshError("seed covers every vertex; nothing left to plan")
        interior = self.seed[~mesh.is_boundary_vertex[self.seed]]
        if interior.size:
            raise MeshError(f"seed vertex {int(interior[0])} is not on the mesh boundary", int(interior[0]))
        if self.mode == "contour":
            if mesh.is_closed:
                raise MeshError("contour mode requires boundary")
            missing = np.setdiff1d(np.flatnonzero(mesh.is_boundary_vertex), self.seed)
            if missing.size:
                raise MeshError(
                    f"contour mode seed must cover all boundary loops (vertex {int(missing[0])} missing)",
                    int(missing[0]),
                )

    @classmethod
    def contour(cls, mesh: TriMesh) -> "BoundaryCondition":
        if mesh.is_closed:
            raise MeshError("contour mode requires boundary")
        return cls(np.flatnonzero(mesh.is_boundary_vertex), "contour")

    @classmethod
    def from_loop(cls, mesh: TriMesh, loop: int = 0, span: tuple[int, int] | None = None) -> "BoundaryCondition":
        """Direction-parallel seed: loop positions ``span[0]..span[1]`` inclusive."""
        if not mesh.boundary_loops:
            raise MeshError("direction mode requires boundary")
        if not 0 <= loop < len(mesh.boundary_loops):
            raise MeshError(f"boundary loop {loop} does not exist ({len(mesh.boundary_loops)} loops)")
        cyc = mesh.boundary_loops[loop]
        if span is None:
            return cls(cyc, "direction")
        i, j = span
        n = len(cyc)
        idx = [(i + k) % n for k in range(((j - i) % n) + 1)]
        return cls(cyc[idx], "direction")

    @classmethod
    def from_extreme(cls, mesh: TriMesh, axis: str = "x", side: str = "min", tol: float | None = None):
        """Direction-parallel seed: boundary vertices at the min/max of an axis."""
        k = "xyz".index(axis)
        c = mesh.vertices[:, k]
        b = np.flatnonzero(mesh.is_boundary_vertex)
        if b.size == 0:
            raise MeshError("direction mode requires boundary")
        ext = c[b].min() if side == "min" else c[b].max()
        if tol is None:
            tol = 1e-9 * max(np.ptp(mesh.vertices, axis=0).max(), 1.0)
        return cls(b[np.abs(c[b] - ext) <= tol], "direction")


@dataclass
class SolveReport:
    iterations: int
    outer_iterations: int
    energy: EnergyBreakdown
    initial_energy: EnergyBreakdown
    max_constraint_violation: float
    min_constraint: float
    status: str
    repaired_start: bool
    grad_norm: float
    grad_tol_abs: float
    eps_g: float
    mu_final: float
    wall_time: float | None
    trace: list = field(default_factory=list)
    kappa_s_mode: str = "coupled"

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "infeasible-start-repaired")

    def to_dict(self, deterministic: bool = False) -> dict:
        return {
            "iterations": self.iterations,
            "outer_iterations": self.outer_iterations,
            "status": self.status,
            "repaired_start": self.repaired_start,
            "energy": self.energy.summary(),
            "initial_energy": self.initial_energy.summary(),
            "max_constraint_violation": self.max_constraint_violation,
            "min_constraint": self.min_constraint,
            "grad_norm": self.grad_norm,
            "grad_tol_abs": self.grad_tol_abs,
            "eps_g": self.eps_g,
            "mu_final": self.mu_final,
            "kappa_s_mode": self.kappa_s_mode,
            "wall_time": None if deterministic else self.wall_time,
        }

    def trace_csv(self) -> str:
        lines = ["iter,E_w,E_kappa,E_total,max_violation"]
        lines += [f"{it},{ew!r},{ek!r},{et!r},{mv!r}" for it, ew, ek, et, mv in self.trace]
        return "\n".join(lines) + "\n"


# -- linear algebra helpers ---------------------------------------------------

def _dirichlet_solve(A: sparse.spmatrix, b: np.ndarray, fixed: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` with ``x[fixed] = values`` and check the residual."""
    n = A.shape[0]
    mask = np.zeros(n, dtype=bool)
    mask[fixed] = True
    free = ~mask
    x = np.zeros(n)
    x[fixed] = values
    A = A.tocsr()
    Aff = A[free][:, free].tocsc()
    rhs = b[free] - A[free][:, mask] @ x[mask]
    x[free] = spsolve(Aff, rhs)
    res = np.linalg.norm(Aff @ x[free] - rhs)
    scale = max(np.linalg.norm(rhs), 1e-300)
    if res > LINEAR_SOLVE_RTOL * scale and res > 1e-14:
        raise SolverError(f"linear solve residual {res / scale:.2e} exceeds {LINEAR_SOLVE_RTOL:g}")
    return x


def _check_reachable(mesh: TriMesh, seed: np.ndarray) -> None:
    E = mesh.edges
    n = mesh.n_vertices
    adj = sparse.coo_matrix((np.ones(len(E)), (E[:, 0], E[:, 1])), shape=(n, n))
    ncomp, labels = csgraph.connected_components(adj, directed=False)
    if ncomp > 1:
        seeded = np.unique(labels[seed])
        for c in range(ncomp):
            if c not in seeded:
                members = np.flatnonzero(labels == c)
                raise MeshError(
                    f"mesh component {c} ({members.size} vertices, first {int(members[0])}) "
                    "is unreachable from the seed curve",
                    int(members[0]),
                )


def geodesic_distance(mesh: TriMesh, sources, t: float | None = None) -> np.ndarray:
    """Heat-method geodesic distance to ``sources`` (vertex indices).

    One backward-Euler heat step with ``t = mean_edge**2``, normalised
    negated gradient, then a Poisson solve with ``d = 0`` on the sources.
    """
    sources = np.unique(np.asarray(sources, dtype=np.int64))
    _check_reachable(mesh, sources)
    if t is None:
        t = mesh.mean_edge_length() ** 2
    K = diffops.stiffness_matrix(mesh)
    M = sparse.diags(mesh.dual_areas)
    delta = np.zeros(mesh.n_vertices)
    delta[sources] = 1.0
    H = (M + t * K).tocsc()
    u = spsolve(H, delta)
    if np.linalg.norm(H @ u - delta) > LINEAR_SOLVE_RTOL * np.linalg.norm(delta):
        raise SolverError("heat solve did not reach the residual tolerance")
    gu = diffops.gradient(mesh, u)
    norm = np.linalg.norm(gu, axis=1)
    X = np.zeros_like(gu)
    ok = norm > 0
    X[ok] = -gu[ok] / norm[ok, None]
    G = diffops.gradient_operator(mesh)
    b = G.T @ (np.repeat(mesh.face_areas, 3) * X.ravel())
    return _dirichlet_solve(K, b, sources, np.zeros(sources.size))


def _repair(mesh: TriMesh, phi: np.ndarray, fixed: np.ndarray, eps_g: float, max_rounds: int = 200) -> tuple[np.ndarray, bool]:
    """Lift the highest free vertex of each too-flat face until all faces pass."""
    phi = phi.copy()
    fixed_mask = np.zeros(mesh.n_vertices, dtype=bool)
    fixed_mask[fixed] = True
    repaired = False
    h = mesh.mean_edge_length()
    for _ in range(max_rounds):
        norm = np.linalg.norm(diffops.gradient(mesh, phi), axis=1)
        bad = np.flatnonzero(norm <= eps_g)
        if bad.size == 0:
            return phi, repaired
        repaired = True
        for f in bad:
            tri = mesh.faces[f]
            cand = tri[~fixed_mask[tri]]
            if cand.size == 0:
                raise SolverError(f"face {f} has only seed vertices and cannot satisfy the gradient floor")
            v = cand[np.argmax(phi[cand])]
            phi[v] += 2.0 * eps_g * h
    raise SolverError("could not repair an infeasible initial field")


def initialize(
    mesh: TriMesh,
    bc: BoundaryCondition,
    config: PlannerConfig,
    curvature: CurvatureData | None = None,
) -> tuple[np.ndarray, bool]:
    """Scaled geodesic distance from the seed; returns ``(phi0, repaired)``."""
    bc.validate(mesh)
    if curvature is None:
        curvature = diffops.curvature_tensor(mesh)
    dist = geodesic_distance(mesh, bc.seed)
    phi = median_target(curvature, config.kappa_c) * dist
    phi[bc.seed] = 0.0
    return _repair(mesh, phi, bc.seed, config.resolve_eps_g(curvature))


# -- constrained minimisation ---------------------------------------------------

class _Merit:
    """E_total plus a log barrier on the gradient floor, over free vertices."""

    def __init__(self, mesh, config, curvature, eps_g, free, fixed_values):
        self.mesh, self.config, self.curvature, self.eps_g = mesh, config, curvature, eps_g
        self.free = free
        self.base = fixed_values
        self.tbar2 = median_target(curvature, config.kappa_c) ** 2
        self.A = mesh.face_areas

    def full(self, x):
        phi = self.base.copy()
        phi[self.free] = x
        return phi

    def state(self, x) -> _State | None:
        try:
            st = _State(self.mesh, self.full(x), self.config.kappa_c, self.config.lam, self.curvature, self.eps_g)
        except DegenerateGradientError:
            return None
        if np.any(st.s - self.eps_g <= 0):
            return None
        return st

    def value(self, st: _State, mu: float) -> float:
        E = st.breakdown().E_total
        if mu > 0:
            c = st.s - self.eps_g
            E += mu * self.tbar2 * math.fsum(-self.A * np.log(c / math.sqrt(self.tbar2)))
        return E

    hessian = "psd"

    def derivatives(self, st: _State, mu: float, exact: bool | None = None):
        """Gradient and Hessian over the free vertices.

        ``exact`` adds the second-order residual terms to Gauss-Newton's
        ``2 J^T J``; they matter where the unit gradient turns quickly.
        """
        J = st.jacobian()
        R = st.residual_vector()
        Jf = J[:, self.free]
        grad = 2.0 * (Jf.T @ R)
        H = 2.0 * (Jf.T @ Jf)
        nf = len(st.s)
        mode = self.hessian if exact is None else ("exact" if exact else "gauss-newton")
        exact = mode != "gauss-newton"
        blocks = 2.0 * st.curvature_blocks() if exact else np.zeros((nf, 2, 2))
        if mode == "psd":
            w, Q = np.linalg.eigh(blocks)
            blocks = np.einsum("fij,fj,fkj->fik", Q, np.maximum(w, 0.0), Q)
        if mu > 0:
            c = st.s - self.eps_g
            k = mu * self.tbar2 * self.A
            rows = np.repeat(np.arange(nf), 2)
            cols = np.arange(2 * nf)
            U = sparse.csr_matrix((st.u.ravel(), (rows, cols)), shape=(nf, 2 * nf)) @ st.B
            grad = grad + U[:, self.free].T @ (-k / c)
            uu = np.einsum("fi,fj->fij", st.u, st.u)
            blocks += (k / c**2)[:, None, None] * uu
            if exact:
                blocks -= (k / (st.s * c))[:, None, None] * (np.eye(2)[None] - uu)
        br = np.repeat(np.arange(2 * nf), 2)
        bc = (2 * np.arange(nf)[:, None, None] + np.zeros((1, 2, 1), dtype=int) + np.arange(2)[None, None, :]).ravel()
        Sm = sparse.csr_matrix((blocks.ravel(), (br, bc)), shape=(2 * nf, 2 * nf))
        Bf = st.B[:, self.free]
        H = H + Bf.T @ Sm @ Bf
        return grad, H.tocsc()


def projected_gradient_norm(st: _State, free: np.ndarray, eps_g: float) -> float:
    """KKT residual ``min_{m >= 0} |dE - sum_f m_f dc_f|`` over nearly active faces.

    Faces with ``c_f < eps_g`` count as active. With none active this is
    just ``|dE|`` over the free vertices.
    """
    J = st.jacobian()
    gE = 2.0 * (J[:, free].T @ st.residual_vector())
    c = st.s - eps_g
    active = np.flatnonzero(c < eps_g)
    if active.size == 0:
        return float(np.linalg.norm(gE))
    nf = len(c)
    U = sparse.csr_matrix((st.u.ravel(), (np.repeat(np.arange(nf), 2), np.arange(2 * nf))), shape=(nf, 2 * nf)) @ st.B
    Ga = U[active][:, free].T.tocsr()
    res = lsq_linear(Ga, gE, bounds=(0.0, np.inf), lsmr_tol="auto", tol=1e-12)
    return float(np.linalg.norm(Ga @ res.x - gE))


def solve(
    mesh: TriMesh,
    bc: BoundaryCondition,
    config: PlannerConfig,
    curvature: CurvatureData | None = None,
    phi0=None,
) -> tuple[np.ndarray, SolveReport]:
    """Minimise the planning energy subject to ``|grad phi| >= eps_g``.

    Log-barrier continuation on ``mu`` (outer loop); each barrier problem is
    minimised by damped Newton steps (Gauss-Newton plus PSD-clamped curvature
    blocks) with a backtracking line search that rejects infeasible trial
    fields. Seed values stay exactly 0.
    """
    t0 = time.perf_counter()
    bc.validate(mesh)
    if curvature is None:
        curvature = diffops.curvature_tensor(mesh)
    eps_g = config.resolve_eps_g(curvature)
    if phi0 is None:
        phi0, repaired = initialize(mesh, bc, config, curvature)
    else:
        phi0 = np.array(phi0, dtype=float)
        phi0[bc.seed] = 0.0
        phi0, repaired = _repair(mesh, phi0, bc.seed, eps_g)

    free = np.ones(mesh.n_vertices, dtype=bool)
    free[bc.seed] = False
    base = np.zeros(mesh.n_vertices)
    merit = _Merit(mesh, config, curvature, eps_g, free, base)
    x = phi0[free].copy()
    st = merit.state(x)
    if st is None:
        raise SolverError("initial field violates the gradient floor after repair")
    initial = st.breakdown()

    mu = config.barrier_mu0
    g0, _ = merit.derivatives(st, mu)
    tol_abs = config.grad_tol * max(np.linalg.norm(g0), 1e-12 * max(initial.E_total, 1e-300))
    trace = [(0, initial.E_w, initial.E_kappa, initial.E_total, 0.0)]
    iters = 0
    outer = 0
    grad_norm = np.linalg.norm(g0)
    for outer in range(1, config.max_outer + 1):
        nu = 1e-6
        F = merit.value(st, mu)
        for _ in range(config.max_inner):
            grad, H = merit.derivatives(st, mu)
            grad_norm = float(np.linalg.norm(grad))
            if grad_norm <= tol_abs:
                break
            diag = H.diagonal()
            dscale = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))
            accepted = False
            while nu < 1e12:
                step = spsolve((H + sparse.diags(nu * dscale)).tocsc(), -grad)
                slope = float(grad @ step)
                if slope >= 0:
                    nu *= 10.0
                    continue
                alpha = 1.0
                for _ls in range(30):
                    cand = merit.state(x + alpha * step)
                    if cand is not None:
                        Fc = merit.value(cand, mu)
                        if Fc <= F + 1e-4 * alpha * slope:
                            accepted = True
                            break
                    alpha *= 0.5
                if accepted:
                    break
                nu *= 10.0
            iters += 1
            if not accepted:
                logger.info("line search failed at outer %d (nu=%g)", outer, nu)
                break
            x = x + alpha * step
            st = cand
            dF = F - Fc
            F = Fc
            nu = max(nu / 3.0, 1e-9) if alpha == 1.0 else nu * 2.0
            bd = st.breakdown()
            trace.append((iters, bd.E_w, bd.E_kappa, bd.E_total, 0.0))
            if dF <= 1e-15 * max(abs(F), 1e-300):
                grad, _ = merit.derivatives(st, mu)
                grad_norm = float(np.linalg.norm(grad))
                break
        if outer == config.max_outer:
            break
        mu *= config.barrier_shrink

    final = st.breakdown()
    cons = st.s - eps_g
    if grad_norm > tol_abs:
        # barrier gradient mixes in multiplier estimates; judge the KKT residual
        grad_norm = min(grad_norm, projected_gradient_norm(st, free, eps_g))
    status = "converged" if grad_norm <= tol_abs and cons.min() >= 0 else "max-iter"
    if status == "converged" and repaired:
        status = "infeasible-start-repaired"
    phi = merit.full(x)
    report = SolveReport(
        iterations=iters,
        outer_iterations=outer,
        energy=final,
        initial_energy=initial,
        max_constraint_violation=float(max(0.0, -cons.min())),
        min_constraint=float(cons.min()),
        status=status,
        repaired_start=repaired,
        grad_norm=grad_norm,
        grad_tol_abs=float(tol_abs),
        eps_g=float(eps_g),
        mu_final=float(mu),
        wall_time=time.perf_counter() - t0,
        trace=trace,
    )
    logger.info("solve: %s after %d iterations, E %.6g -> %.6g", status, iters, initial.E_total, final.E_total)
    return phi, report


def solve_laplacian_baseline(mesh: TriMesh, bc: BoundaryCondition, high=None) -> np.ndarray:
    """Discrete harmonic field: 0 on the seed, 1 on ``high``.

    ``high`` defaults to the vertex farthest (geodesically) from the seed.
    """
    bc.validate(mesh)
    if high is None:
        high = [int(np.argmax(geodesic_distance(mesh, bc.seed)))]
    high = np.unique(np.asarray(high, dtype=np.int64))
    if np.intersect1d(high, bc.seed).size:
        raise ValueError("high set overlaps the seed; the harmonic field would be constant")
    fixed = np.concatenate([bc.seed, high])
    values = np.concatenate([np.zeros(bc.seed.size), np.ones(high.size)])
    return _dirichlet_solve(diffops.stiffness_matrix(mesh), np.zeros(mesh.n_vertices), fixed, values)


def best_scale(mesh: TriMesh, phi, kappa_c: float, curvature: CurvatureData | None = None) -> float:
    """Scale ``s`` minimising ``sum A (s|g| - target)^2`` (targets are scale-free)."""
    if curvature is None:
        curvature = diffops.curvature_tensor(mesh)
    g = diffops.frame_gradient_operator(mesh) @ np.asarray(phi, dtype=float)
    g = g.reshape(-1, 2)
    s = np.linalg.norm(g, axis=1)
    ok = s > 0
    u = np.zeros_like(g)
    u[ok] = g[ok] / s[ok, None]
    ks = np.einsum("fi,fij,fj->f", u, curvature.tensor, u)
    total = ks + kappa_c
    use = ok & (total > 0)
    if not use.any():
        raise DegenerateGradientError("field is constant; no scale fits the targets")
    A = mesh.face_areas[use]
    t = np.sqrt(total[use] / 8.0)
    return float(np.sum(A * s[use] * t) / np.sum(A * s[use] ** 2))


def _warn_if_not_converged(report: SolveReport) -> None:
    if not report.converged:
        warnings.warn(f"solver stopped with status {report.status!r}", RuntimeWarning, stacklevel=3)
