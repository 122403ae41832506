"""End-to-end solve pipelines with run metrics.

solve_direct builds the H-matrix (cluster tree, admissibility blocks,
ACA fill), factors it with H-LU and back-substitutes. solve_dense is
the O(N^2)/O(N^3) reference; solve_gmres runs unpreconditioned
restarted GMRES on the compressed operator. All pipelines report the
a-posteriori residual so acceptance checks never depend on internal
convergence flags.
"""

from __future__ import annotations

import resource
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.constants import speed_of_light

from . import assembly as asm
from . import hmatrix as hm
from . import quadrature as quad
from .errors import NoConvergence
from .geometry import Patch
from .kernels import Excitation, FormulationSpec


@dataclass
class Problem:
    """Full scattering description plus solver parameters."""

    patches: list[Patch]
    spec: FormulationSpec
    excitation: Excitation
    aca_tol: float = 1e-4
    trunc_tol: Optional[float] = None     # None: same as aca_tol
    gmres_tol: float = 1e-4
    eta: float = 2.0
    n_leaf: int = 64
    tau: float = quad.DEFAULT_NEAR_FACTOR
    grading: int = quad.DEFAULT_GRADING
    oversample: Optional[int] = None
    dense_cap: int = asm.DENSE_CAP_DEFAULT
    workers: int = 1
    gmres_restart: int = 200
    gmres_max_iters: int = 2000

    def __post_init__(self):
        for name in ("aca_tol", "gmres_tol"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.trunc_tol is not None and not (0.0 < self.trunc_tol < 1.0):
            raise ValueError("trunc_tol must lie in (0, 1)")

    @property
    def wavelength(self) -> float:
        return 2.0 * np.pi * speed_of_light / self.spec.outer.omega

    @property
    def effective_trunc_tol(self) -> float:
        return self.aca_tol if self.trunc_tol is None else self.trunc_tol

    def generator(self) -> asm.EntryGenerator:
        return asm.EntryGenerator(self.patches, self.spec, tau=self.tau,
                                  oversample=self.oversample,
                                  grading=self.grading)

    @property
    def n_dofs(self) -> int:
        return asm.dof_count(self.patches, self.spec)


@dataclass
class SolveResult:
    solution: np.ndarray
    residual: float
    metrics: dict = field(default_factory=dict)
    iterations: int = 0
    converged: bool = True


def _peak_rss_bytes() -> int:
    # ru_maxrss is KiB on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


class EquilibratedGenerator:
    """Diagonal two-sided rescaling of the entry generator.

    The tested Muller system carries SI factors (eps on E-rows, mu on
    H-rows, impedance between J and M columns) that spread entry
    magnitudes over ~3 decades. Norm-relative ACA and formatted-LU
    truncations then starve the small rows, so the compressed solvers
    work on the dimensionless system D_r A D_c, where identity jumps
    are O(1) and all operator blocks share the k G / grad G scale.
    MFIE systems are uniform already (scales are identity).
    """

    def __init__(self, gen: asm.EntryGenerator):
        self.base = gen
        self.dofmap = gen.dofmap
        spec = gen.spec
        C = spec.n_components
        if C == 2:
            row_c = np.ones(2)
            col_c = np.ones(2)
        else:
            eps1, mu1 = spec.outer.eps, spec.outer.mu
            eta1 = spec.outer.eta
            row_c = np.array([1.0 / eps1, 1.0 / eps1, eta1 / mu1, eta1 / mu1])
            col_c = np.array([1.0 / eta1, 1.0 / eta1, 1.0, 1.0])
        n_pts = gen.dofmap.n_points
        self.row_scale = np.tile(row_c, n_pts)
        self.col_scale = np.tile(col_c, n_pts)

    def row_segment(self, i, cols):
        return self.base.row_segment(i, cols) * (self.row_scale[i]
                                                 * self.col_scale[cols])

    def col_segment(self, rows, j):
        return self.base.col_segment(rows, j) * (self.row_scale[rows]
                                                 * self.col_scale[j])

    def block(self, rows, cols, fast: bool = True):
        out = self.base.block(rows, cols, fast=fast)
        return out * self.row_scale[rows][:, None] * self.col_scale[cols][None, :]


def build_hmatrix(problem: Problem, gen: Optional[asm.EntryGenerator] = None):
    """Cluster tree + block tree + ACA/dense fill of the scaled system."""
    gen = gen or problem.generator()
    scaled = EquilibratedGenerator(gen)
    t0 = time.perf_counter()
    points = gen.dofmap.point_positions()
    tree = hm.build_cluster_tree(points, problem.spec.n_components,
                                 problem.n_leaf)
    H = hm.build_block_tree(tree, problem.eta)
    t_tree = time.perf_counter() - t0
    t0 = time.perf_counter()
    H.fill(scaled, problem.aca_tol, workers=problem.workers)
    t_fill = time.perf_counter() - t0
    return H, gen, scaled, {"tree_s": t_tree, "fill_s": t_fill}


def solve_direct(problem: Problem) -> SolveResult:
    """H-matrix fill, H-LU factorization, forward/backward substitution."""
    H, gen, scaled, times = build_hmatrix(problem)
    b = asm.rhs(problem.patches, problem.spec, problem.excitation)
    b_scaled = b * scaled.row_scale
    t0 = time.perf_counter()
    factors = hm.hlu_factor(H, problem.effective_trunc_tol)
    t_factor = time.perf_counter() - t0
    t0 = time.perf_counter()
    x = factors.solve(b_scaled) * scaled.col_scale
    t_solve = time.perf_counter() - t0
    bnorm = np.linalg.norm(b_scaled)
    residual = float(np.linalg.norm(H.matvec(x / scaled.col_scale) - b_scaled)
                     / bnorm) if bnorm else 0.0
    metrics = {
        **times,
        "factor_s": t_factor,
        "solve_s": t_solve,
        "n_dofs": problem.n_dofs,
        "hmatrix_bytes": H.memory_bytes(),
        "hlu_bytes": factors.memory_bytes(),
        "compression_rate": H.compression_rate(),
        "peak_rss_bytes": _peak_rss_bytes(),
        "memory_method": "ru_maxrss sampling + logical leaf accounting",
        "hmatrix_diagnostics": H.diagnostics(),
        "newton_fallbacks": gen.newton_fallbacks,
    }
    return SolveResult(x, residual, metrics)


def solve_dense(problem: Problem) -> SolveResult:
    """Dense assembly + LAPACK LU; the reference path (cap applies)."""
    gen = problem.generator()
    t0 = time.perf_counter()
    A = asm.assemble_dense(gen, cap=problem.dense_cap, workers=problem.workers)
    t_fill = time.perf_counter() - t0
    b = asm.rhs(problem.patches, problem.spec, problem.excitation)
    t0 = time.perf_counter()
    lu, piv = sla.lu_factor(A)
    t_factor = time.perf_counter() - t0
    t0 = time.perf_counter()
    x = sla.lu_solve((lu, piv), b)
    t_solve = time.perf_counter() - t0
    bnorm = np.linalg.norm(b)
    residual = float(np.linalg.norm(A @ x - b) / bnorm) if bnorm else 0.0
    metrics = {
        "fill_s": t_fill,
        "factor_s": t_factor,
        "solve_s": t_solve,
        "n_dofs": problem.n_dofs,
        "dense_bytes": A.nbytes,
        "peak_rss_bytes": _peak_rss_bytes(),
        "memory_method": "ru_maxrss sampling + logical array accounting",
        "newton_fallbacks": gen.newton_fallbacks,
    }
    return SolveResult(x, residual, metrics)


def gmres(matvec, b: np.ndarray, tol: float, restart: int, max_iters: int):
    """Restarted GMRES with zero initial guess and Givens updates.

    Returns (x, total_inner_iterations, relative_residual, converged).
    One reorthogonalization pass keeps the Arnoldi basis usable for the
    poorly conditioned near-resonance sweeps.
    """
    n = b.size
    bnorm = np.linalg.norm(b)
    x = np.zeros(n, dtype=complex)
    if bnorm == 0.0:
        return x, 0, 0.0, True
    total = 0
    while total < max_iters:
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        if beta / bnorm <= tol:
            return x, total, float(beta / bnorm), True
        m = min(restart, max_iters - total)
        V = np.empty((m + 1, n), dtype=complex)
        Hm = np.zeros((m + 1, m), dtype=complex)
        cs = np.zeros(m, dtype=complex)
        sn = np.zeros(m, dtype=complex)
        g = np.zeros(m + 1, dtype=complex)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        for j in range(m):
            w = matvec(V[j])
            for i in range(j + 1):
                Hm[i, j] = np.vdot(V[i], w)
                w = w - Hm[i, j] * V[i]
            for i in range(j + 1):       # single reorthogonalization
                corr = np.vdot(V[i], w)
                Hm[i, j] += corr
                w = w - corr * V[i]
            hnorm = np.linalg.norm(w)
            Hm[j + 1, j] = hnorm
            for i in range(j):
                tmp = cs[i] * Hm[i, j] + sn[i] * Hm[i + 1, j]
                Hm[i + 1, j] = -np.conj(sn[i]) * Hm[i, j] + np.conj(cs[i]) * Hm[i + 1, j]
                Hm[i, j] = tmp
            denom = np.sqrt(np.abs(Hm[j, j]) ** 2 + np.abs(Hm[j + 1, j]) ** 2)
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j] = np.conj(Hm[j, j]) / denom
                sn[j] = np.conj(Hm[j + 1, j]) / denom
            Hm[j, j] = cs[j] * Hm[j, j] + sn[j] * Hm[j + 1, j]
            Hm[j + 1, j] = 0.0
            g[j + 1] = -np.conj(sn[j]) * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_done = j + 1
            if abs(g[j + 1]) / bnorm <= tol or hnorm == 0.0 or total >= max_iters:
                break
            V[j + 1] = w / hnorm
        y = sla.solve_triangular(Hm[:j_done, :j_done], g[:j_done], lower=False)
        x = x + V[:j_done].T @ y
        rel = np.linalg.norm(b - matvec(x)) / bnorm
        if rel <= tol:
            return x, total, float(rel), True
    rel = float(np.linalg.norm(b - matvec(x)) / bnorm)
    return x, total, rel, False


def solve_gmres(problem: Problem, restart: Optional[int] = None,
                max_iters: Optional[int] = None) -> SolveResult:
    """Unpreconditioned GMRES on the compressed (or small dense) operator."""
    restart = restart if restart is not None else problem.gmres_restart
    max_iters = max_iters if max_iters is not None else problem.gmres_max_iters
    N = problem.n_dofs
    if N <= 600:
        gen = problem.generator()
        scaled = EquilibratedGenerator(gen)
        t0 = time.perf_counter()
        A = asm.assemble_dense(gen, cap=problem.dense_cap,
                               workers=problem.workers)
        A = A * scaled.row_scale[:, None] * scaled.col_scale[None, :]
        t_fill = time.perf_counter() - t0
        matvec = lambda v: A @ v
        fill_metrics = {"fill_s": t_fill, "operator": "dense"}
    else:
        H, gen, scaled, times = build_hmatrix(problem)
        matvec = H.matvec
        fill_metrics = {**times, "operator": "hmatrix",
                        "hmatrix_bytes": H.memory_bytes(),
                        "compression_rate": H.compression_rate()}
    b = asm.rhs(problem.patches, problem.spec, problem.excitation)
    t0 = time.perf_counter()
    y, iters, rel, ok = gmres(matvec, b * scaled.row_scale, problem.gmres_tol,
                              restart, max_iters)
    x = y * scaled.col_scale
    t_solve = time.perf_counter() - t0
    metrics = {
        **fill_metrics,
        "solve_s": t_solve,
        "n_dofs": N,
        "peak_rss_bytes": _peak_rss_bytes(),
        "memory_method": "ru_maxrss sampling + logical leaf accounting",
    }
    return SolveResult(x, float(rel), metrics, iterations=iters, converged=ok)
